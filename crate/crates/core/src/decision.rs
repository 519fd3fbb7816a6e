//! Decision schema: parsing policy output into decisions and rendering
//! decisions back into the same text form.
//!
//! A decision is an optional `Thought:` block followed by exactly one
//! `Action:` line. `ExecutePlan()` is followed by a fenced ```` ```plan ````
//! block holding the script. Anything after the action block is ignored.

use std::collections::BTreeMap;
use std::fmt;

use autopilot_plan::PlanScript;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed decision: {0}")]
pub struct MalformedDecision(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    FinalAnswer,
    ExecutePlan,
    PerceiveWeb,
    PerceiveFile,
    MemoryRead,
    MemoryWrite,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FinalAnswer => "final_answer",
            Self::ExecutePlan => "execute_plan",
            Self::PerceiveWeb => "perceive_web",
            Self::PerceiveFile => "perceive_file",
            Self::MemoryRead => "memory_read",
            Self::MemoryWrite => "memory_write",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepDecision {
    FinalAnswer(String),
    ExecutePlan(PlanScript),
    PerceiveWeb { instruction: String, url: Option<String> },
    PerceiveFile { instruction: String, file: Option<String> },
    MemoryRead(String),
    MemoryWrite(String),
}

impl StepDecision {
    pub fn kind(&self) -> DecisionKind {
        match self {
            Self::FinalAnswer(_) => DecisionKind::FinalAnswer,
            Self::ExecutePlan(_) => DecisionKind::ExecutePlan,
            Self::PerceiveWeb { .. } => DecisionKind::PerceiveWeb,
            Self::PerceiveFile { .. } => DecisionKind::PerceiveFile,
            Self::MemoryRead(_) => DecisionKind::MemoryRead,
            Self::MemoryWrite(_) => DecisionKind::MemoryWrite,
        }
    }

    /// The decision's payload as plain text.
    pub fn payload(&self) -> String {
        match self {
            Self::FinalAnswer(s) | Self::MemoryRead(s) | Self::MemoryWrite(s) => s.clone(),
            Self::ExecutePlan(p) => p.source.clone(),
            Self::PerceiveWeb { instruction, url } => match url {
                Some(u) => format!("{instruction} @ {u}"),
                None => instruction.clone(),
            },
            Self::PerceiveFile { instruction, file } => match file {
                Some(f) => format!("{instruction} @ {f}"),
                None => instruction.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub role: String,
    pub name: String,
    /// 1-based ordinal among nodes sharing this role and name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nth: Option<usize>,
}

impl Target {
    pub fn new(role: impl Into<String>, name: impl Into<String>) -> Self {
        Self { role: role.into(), name: name.into(), nth: None }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} '{}'", self.role, self.name)?;
        if let Some(n) = self.nth {
            write!(f, " #{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum WebAction {
    Click { target: Target },
    Type { target: Target, text: String },
    Scroll { direction: Direction },
    Goback,
    Restart,
    Stop { summary: String },
}

impl WebAction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Click { .. } => "Click",
            Self::Type { .. } => "Type",
            Self::Scroll { .. } => "Scroll",
            Self::Goback => "Goback",
            Self::Restart => "Restart",
            Self::Stop { .. } => "Stop",
        }
    }
}

/// Either kind of decision the schema can express.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Step(StepDecision),
    Web(WebAction),
}

/// A decision together with the thought that preceded it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub thought: Option<String>,
    pub action: T,
}

pub fn parse_decision(text: &str) -> Result<Parsed<Decision>, MalformedDecision> {
    let (thought, call, rest) = locate_action(text)?;
    let action = build(&call, rest)?;
    Ok(Parsed { thought, action })
}

/// Parses a decision for a reasoning-level task; web actions are rejected.
pub fn parse_step_decision(text: &str) -> Result<Parsed<StepDecision>, MalformedDecision> {
    let p = parse_decision(text)?;
    match p.action {
        Decision::Step(d) => Ok(Parsed { thought: p.thought, action: d }),
        Decision::Web(w) => Err(bad(format!("{} is only valid while browsing", w.name()))),
    }
}

/// Parses a decision inside the browse loop: a web action, or a nested
/// perception request.
pub fn parse_web_decision(text: &str) -> Result<Parsed<Decision>, MalformedDecision> {
    let p = parse_decision(text)?;
    match &p.action {
        Decision::Step(StepDecision::FinalAnswer(_)) => Err(bad("use Stop(summary) to finish browsing")),
        Decision::Step(StepDecision::ExecutePlan(_)) => Err(bad("ExecutePlan is not available while browsing")),
        _ => Ok(p),
    }
}

pub fn parse_web_action(text: &str) -> Result<WebAction, MalformedDecision> {
    match parse_decision(text)?.action {
        Decision::Web(w) => Ok(w),
        Decision::Step(d) => Err(bad(format!("expected a web action, got {}", d.kind().as_str()))),
    }
}

pub fn render_decision(thought: Option<&str>, decision: &Decision) -> String {
    let mut out = String::new();
    if let Some(t) = thought {
        out.push_str("Thought: ");
        out.push_str(t);
        out.push('\n');
    }
    out.push_str("Action: ");
    match decision {
        Decision::Step(d) => render_step(&mut out, d),
        Decision::Web(w) => render_web(&mut out, w),
    }
    out
}

pub fn render_step_decision(thought: Option<&str>, d: &StepDecision) -> String {
    render_decision(thought, &Decision::Step(d.clone()))
}

pub fn render_web_action(thought: Option<&str>, w: &WebAction) -> String {
    render_decision(thought, &Decision::Web(w.clone()))
}

fn render_step(out: &mut String, d: &StepDecision) {
    match d {
        StepDecision::FinalAnswer(s) => out.push_str(&format!("FinalAnswer({})", quote(s))),
        StepDecision::ExecutePlan(p) => {
            out.push_str("ExecutePlan()\n```plan\n");
            out.push_str(&p.source);
            out.push_str("\n```");
        }
        StepDecision::PerceiveWeb { instruction, url } => {
            out.push_str(&format!("PerceiveWeb(instruction={}", quote(instruction)));
            if let Some(u) = url {
                out.push_str(&format!(", url={}", quote(u)));
            }
            out.push(')');
        }
        StepDecision::PerceiveFile { instruction, file } => {
            out.push_str(&format!("PerceiveFile(instruction={}", quote(instruction)));
            if let Some(f) = file {
                out.push_str(&format!(", file={}", quote(f)));
            }
            out.push(')');
        }
        StepDecision::MemoryRead(q) => out.push_str(&format!("MemoryRead({})", quote(q))),
        StepDecision::MemoryWrite(t) => out.push_str(&format!("MemoryWrite({})", quote(t))),
    }
}

fn render_target(t: &Target) -> String {
    let mut s = format!("role={}, name={}", quote(&t.role), quote(&t.name));
    if let Some(n) = t.nth {
        s.push_str(&format!(", nth={n}"));
    }
    s
}

fn render_web(out: &mut String, w: &WebAction) {
    let s = match w {
        WebAction::Click { target } => format!("Click({})", render_target(target)),
        WebAction::Type { target, text } => format!("Type({}, text={})", render_target(target), quote(text)),
        WebAction::Scroll { direction } => {
            format!("Scroll(direction={})", quote(if *direction == Direction::Up { "up" } else { "down" }))
        }
        WebAction::Goback => "Goback()".into(),
        WebAction::Restart => "Restart()".into(),
        WebAction::Stop { summary } => format!("Stop({})", quote(summary)),
    };
    out.push_str(&s);
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn bad(msg: impl Into<String>) -> MalformedDecision {
    MalformedDecision(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
enum Arg {
    Str(String),
    Int(i64),
    Word(String),
}

impl Arg {
    fn text(self) -> String {
        match self {
            Arg::Str(s) | Arg::Word(s) => s,
            Arg::Int(n) => n.to_string(),
        }
    }
}

#[derive(Debug)]
struct Call {
    name: String,
    positional: Vec<Arg>,
    named: BTreeMap<String, Arg>,
}

/// Finds the single `Action:` line outside code fences and parses its call.
/// Returns the thought, the call, and the text following the call.
fn locate_action(text: &str) -> Result<(Option<String>, Call, &str), MalformedDecision> {
    let mut in_fence = false;
    let mut found = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
        } else if !in_fence && trimmed.starts_with("Action:") {
            found.push(offset + (line.len() - trimmed.len()));
        }
        offset += line.len();
    }
    let start = match found.as_slice() {
        [] => return Err(bad("no Action block found")),
        [one] => *one,
        many => return Err(bad(format!("{} Action blocks found; emit exactly one", many.len()))),
    };
    let thought = text[..start]
        .find("Thought:")
        .map(|i| text[i + "Thought:".len()..start].trim().to_string())
        .filter(|t| !t.is_empty());
    let after = &text[start + "Action:".len()..];
    let (call, used) = parse_call(after)?;
    Ok((thought, call, &after[used..]))
}

fn parse_call(src: &str) -> Result<(Call, usize), MalformedDecision> {
    let mut p = Cursor { src, pos: 0 };
    p.skip_inline_ws();
    let name = p.ident().ok_or_else(|| bad("expected an action name after 'Action:'"))?;
    p.skip_inline_ws();
    let mut call = Call { name, positional: Vec::new(), named: BTreeMap::new() };
    if !p.eat('(') {
        return Err(bad(format!("expected '(' after {}", call.name)));
    }
    loop {
        p.skip_ws();
        if p.eat(')') {
            break;
        }
        let save = p.pos;
        let key = p.ident();
        p.skip_ws();
        if let Some(k) = key.filter(|_| p.eat('=')) {
            p.skip_ws();
            let v = p.value()?;
            if call.named.insert(k.clone(), v).is_some() {
                return Err(bad(format!("argument '{k}' given twice")));
            }
        } else {
            p.pos = save;
            if !call.named.is_empty() {
                return Err(bad("positional argument after keyword argument"));
            }
            call.positional.push(p.value()?);
        }
        p.skip_ws();
        if p.eat(',') {
            continue;
        }
        if p.eat(')') {
            break;
        }
        return Err(bad(format!("expected ',' or ')' in {} arguments", call.name)));
    }
    Ok((call, p.pos))
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek().filter(|c| c.is_whitespace()) {
            self.pos += c.len_utf8();
        }
    }

    fn skip_inline_ws(&mut self) {
        while let Some(c) = self.peek().filter(|c| *c == ' ' || *c == '\t') {
            self.pos += c.len_utf8();
        }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(c) = self.peek().filter(|c| c.is_alphanumeric() || *c == '_') {
            self.pos += c.len_utf8();
        }
        (self.pos > start).then(|| self.src[start..self.pos].to_string())
    }

    fn value(&mut self) -> Result<Arg, MalformedDecision> {
        match self.peek() {
            Some(q @ ('"' | '\'')) => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    let c = self.peek().ok_or_else(|| bad("unterminated string"))?;
                    self.pos += c.len_utf8();
                    match c {
                        '\\' => {
                            let e = self.peek().ok_or_else(|| bad("unterminated string"))?;
                            self.pos += e.len_utf8();
                            s.push(match e {
                                'n' => '\n',
                                't' => '\t',
                                'r' => '\r',
                                other => other,
                            });
                        }
                        c if c == q => break,
                        c => s.push(c),
                    }
                }
                Ok(Arg::Str(s))
            }
            Some(c) if c.is_ascii_digit() || c == '-' => {
                let start = self.pos;
                self.pos += 1;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                self.src[start..self.pos]
                    .parse()
                    .map(Arg::Int)
                    .map_err(|_| bad(format!("bad number '{}'", &self.src[start..self.pos])))
            }
            _ => self.ident().map(Arg::Word).ok_or_else(|| bad("expected an argument value")),
        }
    }
}

struct Args<'a> {
    action: &'a str,
    positional: std::vec::IntoIter<Arg>,
    named: BTreeMap<String, Arg>,
}

impl Args<'_> {
    fn take(&mut self, key: &str) -> Option<Arg> {
        self.named.remove(key).or_else(|| self.positional.next())
    }

    fn text(&mut self, key: &str) -> Result<String, MalformedDecision> {
        self.take(key)
            .map(Arg::text)
            .ok_or_else(|| bad(format!("{} requires '{key}'", self.action)))
    }

    fn opt_text(&mut self, key: &str) -> Option<String> {
        self.take(key).map(Arg::text)
    }

    fn target(&mut self) -> Result<Target, MalformedDecision> {
        let role = self.text("role")?;
        let name = self.text("name")?;
        let nth = match self.named.remove("nth") {
            None => None,
            Some(Arg::Int(n)) if n >= 1 => Some(n as usize),
            Some(_) => return Err(bad("nth must be a positive integer")),
        };
        Ok(Target { role, name, nth })
    }

    fn finish(mut self) -> Result<(), MalformedDecision> {
        if let Some(extra) = self.positional.next() {
            return Err(bad(format!("unexpected argument {extra:?} to {}", self.action)));
        }
        if let Some(k) = self.named.keys().next() {
            return Err(bad(format!("unknown argument '{k}' to {}", self.action)));
        }
        Ok(())
    }
}

fn build(call: &Call, rest: &str) -> Result<Decision, MalformedDecision> {
    let key: String = call.name.chars().filter(|c| *c != '_').collect::<String>().to_lowercase();
    let mut a = Args {
        action: &call.name,
        positional: call.positional.clone().into_iter(),
        named: call.named.clone(),
    };
    let d = match key.as_str() {
        "finalanswer" => Decision::Step(StepDecision::FinalAnswer(a.text("answer")?)),
        "executeplan" => {
            let source = match a.opt_text("script") {
                Some(s) => s,
                None => fenced_plan(rest)?,
            };
            let script = PlanScript::parse(&source).map_err(|e| bad(format!("invalid plan: {e}")))?;
            Decision::Step(StepDecision::ExecutePlan(script))
        }
        "perceiveweb" => Decision::Step(StepDecision::PerceiveWeb {
            instruction: a.text("instruction")?,
            url: a.opt_text("url"),
        }),
        "perceivefile" => Decision::Step(StepDecision::PerceiveFile {
            instruction: a.text("instruction")?,
            file: a.opt_text("file"),
        }),
        "memoryread" => Decision::Step(StepDecision::MemoryRead(a.text("query")?)),
        "memorywrite" => Decision::Step(StepDecision::MemoryWrite(a.text("text")?)),
        "click" => Decision::Web(WebAction::Click { target: a.target()? }),
        "type" => {
            let target = a.target()?;
            Decision::Web(WebAction::Type { target, text: a.text("text")? })
        }
        "scroll" => {
            let direction = match a.text("direction")?.to_lowercase().as_str() {
                "up" => Direction::Up,
                "down" => Direction::Down,
                other => return Err(bad(format!("scroll direction must be up or down, got '{other}'"))),
            };
            Decision::Web(WebAction::Scroll { direction })
        }
        "goback" => Decision::Web(WebAction::Goback),
        "restart" => Decision::Web(WebAction::Restart),
        "stop" => Decision::Web(WebAction::Stop { summary: a.text("summary")? }),
        _ => return Err(bad(format!("unknown action '{}'", call.name))),
    };
    a.finish()?;
    Ok(d)
}

fn fenced_plan(rest: &str) -> Result<String, MalformedDecision> {
    let open = rest.find("```").ok_or_else(|| bad("ExecutePlan requires a ```plan block"))?;
    let body = &rest[open + 3..];
    let nl = body.find('\n').ok_or_else(|| bad("unterminated plan block"))?;
    let lang = body[..nl].trim();
    if !(lang.is_empty() || lang == "plan") {
        return Err(bad(format!("plan block must be tagged 'plan', got '{lang}'")));
    }
    let body = &body[nl + 1..];
    let close = body.find("```").ok_or_else(|| bad("unterminated plan block"))?;
    Ok(body[..close].strip_suffix('\n').unwrap_or(&body[..close]).to_string())
}

/// The schema description included in every reasoning prompt.
pub const STEP_SCHEMA: &str = r#"Respond with an optional thought and exactly one action:
Thought: <your reasoning>
Action: <one of>
  FinalAnswer("<answer>")
  ExecutePlan()
  ```plan
  <plan script>
  ```
  PerceiveWeb(instruction="<what to find>", url="<optional start url>")
  PerceiveFile(instruction="<what to find>", file="<optional file id>")
  MemoryRead("<query>")
  MemoryWrite("<text to remember>")"#;

/// The schema description included in every browsing prompt.
pub const WEB_SCHEMA: &str = r#"Respond with an optional thought and exactly one action:
Thought: <your reasoning>
Action: <one of>
  Click(role="<role>", name="<name>")
  Type(role="<role>", name="<name>", text="<text>")
  Scroll(direction="up" | "down")
  Goback()
  Restart()
  Stop("<summary of what you found>")
  MemoryRead("<query>")
  PerceiveFile(instruction="<what to find>", file="<optional file id>")
Add nth=<k> to Click or Type when an element is listed with #k."#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn click_round_trip() {
        let w = parse_web_action(r#"Action: Click(role="button", name="Sign in")"#).unwrap();
        assert_eq!(w, WebAction::Click { target: Target::new("button", "Sign in") });
    }

    #[test]
    fn stop_with_summary() {
        let w = parse_web_action("Thought: done\nAction: Stop(\"The price is $12\")").unwrap();
        assert_eq!(w, WebAction::Stop { summary: "The price is $12".into() });
    }

    #[test]
    fn two_actions_rejected() {
        let text = "Action: Goback()\nAction: Restart()";
        assert!(parse_decision(text).unwrap_err().0.contains("2 Action blocks"));
        assert!(parse_decision("just prose").is_err());
    }

    #[test]
    fn trailing_prose_ignored() {
        let p = parse_decision("Thought: t\nAction: Scroll(down)\nI will then look again.").unwrap();
        assert_eq!(p.thought.as_deref(), Some("t"));
        assert_eq!(p.action, Decision::Web(WebAction::Scroll { direction: Direction::Down }));
    }

    #[test]
    fn plan_block() {
        let text = "Thought: compute\nAction: ExecutePlan()\n```plan\nx = 1\ny = x + 1\n```\nthen answer";
        let p = parse_step_decision(text).unwrap();
        let StepDecision::ExecutePlan(script) = p.action else { panic!() };
        assert_eq!(script.source, "x = 1\ny = x + 1");
        assert!(parse_step_decision("Action: ExecutePlan()\n```plan\nx = (\n```").is_err());
    }

    #[test]
    fn action_inside_fence_is_not_counted() {
        let text = "Action: ExecutePlan()\n```plan\ns = \"x\"\n# Action: Stop()\n```";
        assert!(parse_step_decision(text).is_ok());
    }

    #[test]
    fn web_decisions_reject_final_answer() {
        assert!(parse_web_decision("Action: FinalAnswer(\"x\")").is_err());
        assert!(parse_web_decision("Action: MemoryRead(\"x\")").is_ok());
        assert!(parse_step_decision("Action: Goback()").is_err());
    }

    #[test]
    fn argument_errors() {
        assert!(parse_decision("Action: Click(role=\"button\")").is_err());
        assert!(parse_decision("Action: Click(role=\"a\", name=\"b\", bogus=1)").is_err());
        assert!(parse_decision("Action: Scroll(sideways)").is_err());
        assert!(parse_decision("Action: Fly()").is_err());
        assert!(parse_decision("Action: Stop(\"open").is_err());
    }
}
