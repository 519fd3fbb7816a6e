use crate::error::PlanError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    Kw(Kw),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Dot,
    Assign,
    PlusAssign,
    MinusAssign,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    SlashSlash,
    Percent,
    Newline,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kw {
    If,
    Elif,
    Else,
    While,
    For,
    In,
    Def,
    Return,
    Parallel,
    Break,
    Continue,
    And,
    Or,
    Not,
    True,
    False,
    None,
}

fn keyword(word: &str) -> Option<Kw> {
    Some(match word {
        "if" => Kw::If,
        "elif" => Kw::Elif,
        "else" => Kw::Else,
        "while" => Kw::While,
        "for" => Kw::For,
        "in" => Kw::In,
        "def" => Kw::Def,
        "return" => Kw::Return,
        "parallel" => Kw::Parallel,
        "break" => Kw::Break,
        "continue" => Kw::Continue,
        "and" => Kw::And,
        "or" => Kw::Or,
        "not" => Kw::Not,
        "true" | "True" => Kw::True,
        "false" | "False" => Kw::False,
        "none" | "None" => Kw::None,
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
}

/// Splits plan source into tokens. Newlines inside `()` and `[]` are
/// swallowed so calls and list literals may span lines.
pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, PlanError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut nesting = 0usize;

    let err = |line: usize, message: String| PlanError::Parse { line, message };

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                if nesting == 0 {
                    out.push(Token { tok: Tok::Newline, line });
                }
                line += 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' | '\'' => {
                let quote = c;
                let start_line = line;
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(err(start_line, "unterminated string literal".into()));
                    };
                    i += 1;
                    match ch {
                        '\\' => {
                            let Some(&esc) = chars.get(i) else {
                                return Err(err(line, "unterminated escape".into()));
                            };
                            i += 1;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                'r' => '\r',
                                '0' => '\0',
                                '\\' => '\\',
                                '\'' => '\'',
                                '"' => '"',
                                other => {
                                    return Err(err(line, format!("unknown escape \\{other}")))
                                }
                            });
                        }
                        '\n' => return Err(err(start_line, "newline in string literal".into())),
                        ch if ch == quote => break,
                        ch => s.push(ch),
                    }
                }
                out.push(Token { tok: Tok::Str(s), line: start_line });
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    i += 1;
                }
                let mut is_float = false;
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| err(line, format!("bad number {text}")))?)
                } else {
                    Tok::Int(
                        text.parse()
                            .map_err(|_| err(line, format!("integer literal out of range: {text}")))?,
                    )
                };
                out.push(Token { tok, line });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match keyword(&word) {
                    Some(kw) => Tok::Kw(kw),
                    None => Tok::Ident(word),
                };
                out.push(Token { tok, line });
            }
            _ => {
                let next = chars.get(i + 1).copied();
                let (tok, width) = match (c, next) {
                    ('=', Some('=')) => (Tok::Eq, 2),
                    ('!', Some('=')) => (Tok::Ne, 2),
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('+', Some('=')) => (Tok::PlusAssign, 2),
                    ('-', Some('=')) => (Tok::MinusAssign, 2),
                    ('/', Some('/')) => (Tok::SlashSlash, 2),
                    ('=', _) => (Tok::Assign, 1),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    ('*', _) => (Tok::Star, 1),
                    ('/', _) => (Tok::Slash, 1),
                    ('%', _) => (Tok::Percent, 1),
                    ('(', _) => (Tok::LParen, 1),
                    (')', _) => (Tok::RParen, 1),
                    ('[', _) => (Tok::LBracket, 1),
                    (']', _) => (Tok::RBracket, 1),
                    ('{', _) => (Tok::LBrace, 1),
                    ('}', _) => (Tok::RBrace, 1),
                    (',', _) => (Tok::Comma, 1),
                    (':', _) => (Tok::Colon, 1),
                    (';', _) => (Tok::Semi, 1),
                    ('.', _) => (Tok::Dot, 1),
                    (other, _) => return Err(err(line, format!("unexpected character {other:?}"))),
                };
                match tok {
                    Tok::LParen | Tok::LBracket => nesting += 1,
                    Tok::RParen | Tok::RBracket => nesting = nesting.saturating_sub(1),
                    _ => {}
                }
                out.push(Token { tok, line });
                i += width;
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn newlines_inside_parens_are_dropped() {
        assert_eq!(
            toks("f(1,\n2)\n"),
            vec![
                Tok::Ident("f".into()),
                Tok::LParen,
                Tok::Int(1),
                Tok::Comma,
                Tok::Int(2),
                Tok::RParen,
                Tok::Newline,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#"'a\'b' "c\n""#)[..2], [Tok::Str("a'b".into()), Tok::Str("c\n".into())]);
    }

    #[test]
    fn unterminated_string_is_rejected() {
        assert!(matches!(tokenize("x = 'abc"), Err(PlanError::Parse { line: 1, .. })));
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("1_000 2.5 1e3")[..3], [Tok::Int(1000), Tok::Float(2.5), Tok::Float(1000.0)]);
    }
}
