//! Token counting for prompt and observation budgets.
//!
//! The reference rule splits on whitespace, then emits one token per
//! maximal run of alphanumeric characters and one token per other
//! character. It is deliberately simple so budgets can be checked by hand.

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTokenizer;

impl Tokenizer for ReferenceTokenizer {
    fn count(&self, text: &str) -> usize {
        count_tokens(text)
    }
}

pub fn count_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

pub fn tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("   "), 0);
        assert_eq!(count_tokens("hello world"), 2);
        assert_eq!(count_tokens("[3] button 'Sign in'"), 8);
        assert_eq!(count_tokens("<|obs_omitted|>"), 7);
        assert_eq!(tokens("a,b  c!"), vec!["a", ",", "b", "c", "!"]);
    }

    #[test]
    fn additive_over_whitespace_joins() {
        let a = "The price is $12.";
        let b = "Click(role=\"button\")";
        assert_eq!(count_tokens(&format!("{a}\n{b}")), count_tokens(a) + count_tokens(b));
    }
}
