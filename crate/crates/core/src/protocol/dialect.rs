//! Function-call action syntax used by the instruction generator:
//! `[grasp('cubeA'), place('cubeA', [0.27, 0.12, 1.075], [0, 0, 0, 1])]`.
//!
//! `place` takes the target pose of the named object rather than of the end
//! effector, so its quaternion follows the cube convention.

use super::{ParseError, ParseErrorKind};
use crate::sim::{Action, Pose7};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ParseError> {
    let err = |kind| ParseError::new(kind, 1, text);
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '[' => {
                out.push(Tok::LBracket);
                i += 1
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            '\'' | '"' => {
                let end = chars[i + 1..]
                    .iter()
                    .position(|d| *d == c)
                    .ok_or_else(|| err(ParseErrorKind::MissingSection))?;
                out.push(Tok::Str(chars[i + 1..i + 1 + end].iter().collect()));
                i += end + 2;
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '.' | '-' | '+')) {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push(Tok::Num(v)),
                    _ => return Err(ParseError::new(ParseErrorKind::BadNumber, 1, &s)),
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            _ => return Err(err(ParseErrorKind::BadActionVerb)),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError::new(kind, 1, self.text)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(ParseErrorKind::MissingSection))
        }
    }

    fn numbers(&mut self) -> Result<Vec<f64>, ParseError> {
        self.expect(Tok::LBracket)?;
        let mut out = Vec::new();
        loop {
            match self.peek().cloned() {
                Some(Tok::Num(v)) => {
                    out.push(v);
                    self.pos += 1;
                }
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RBracket) => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(Tok::Ident(_)) => return Err(self.err(ParseErrorKind::BadNumber)),
                _ => return Err(self.err(ParseErrorKind::BadPoseArity)),
            }
        }
    }

    fn pose(&mut self) -> Result<Pose7, ParseError> {
        let p = self.numbers()?;
        if self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
        }
        let q = self.numbers()?;
        if p.len() != 3 || q.len() != 4 {
            return Err(self.err(ParseErrorKind::BadPoseArity));
        }
        let pose = Pose7::new([p[0], p[1], p[2]], [q[0], q[1], q[2], q[3]]);
        if pose.quat_norm() == 0.0 {
            return Err(self.err(ParseErrorKind::BadNumber));
        }
        Ok(pose)
    }

    fn call(&mut self) -> Result<Action, ParseError> {
        let Some(Tok::Ident(name)) = self.peek().cloned() else {
            return Err(self.err(ParseErrorKind::BadActionVerb));
        };
        self.pos += 1;
        self.expect(Tok::LParen)?;
        let action = match name.as_str() {
            "grasp" | "pick" => {
                let Some(Tok::Str(obj)) = self.peek().cloned() else {
                    return Err(self.err(ParseErrorKind::BadActionVerb));
                };
                self.pos += 1;
                Action::pick(obj)
            }
            "place" => {
                let object = match self.peek().cloned() {
                    Some(Tok::Str(obj)) => {
                        self.pos += 1;
                        self.expect(Tok::Comma)?;
                        Some(obj)
                    }
                    _ => None,
                };
                Action::Place {
                    pose: self.pose()?,
                    object,
                }
            }
            "reach" => Action::reach(self.pose()?),
            "reset" => Action::Reset,
            "wait" => Action::Wait,
            _ => return Err(self.err(ParseErrorKind::BadActionVerb)),
        };
        self.expect(Tok::RParen)?;
        Ok(action)
    }
}

/// Parse a bracketed action list. `<nooutput>` and `[]` yield no actions.
/// Text after the closing bracket is ignored.
pub fn parse_dialect_actions(text: &str) -> Result<Vec<Action>, ParseError> {
    let t = text.trim();
    if t.is_empty() || t.trim_end_matches('.').trim() == "<nooutput>" {
        return Ok(Vec::new());
    }
    let body = bracketed_prefix(t).ok_or_else(|| ParseError::new(ParseErrorKind::MissingSection, 1, t))?;
    let mut p = Parser {
        toks: tokenize(body)?,
        pos: 0,
        text: body,
    };
    p.expect(Tok::LBracket)?;
    let mut out = Vec::new();
    loop {
        match p.peek() {
            Some(Tok::RBracket) => {
                p.pos += 1;
                break;
            }
            Some(Tok::Comma) => p.pos += 1,
            Some(_) => out.push(p.call()?),
            None => return Err(p.err(ParseErrorKind::MissingSection)),
        }
    }
    Ok(out)
}

/// The leading balanced `[...]` group of `text`, quotes respected.
pub(crate) fn bracketed_prefix(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    if !text[..start].trim().is_empty() {
        return None;
    }
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    for (i, c) in text[start..].char_indices() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rounded to 3 decimals, shortest form: `1.025`, `0`, `-0.12`.
pub fn fmt_short(x: f64) -> String {
    let r = (x * 1000.0).round() / 1000.0;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r}")
}

fn list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt_short(*v)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn render_dialect_action(action: &Action) -> String {
    match action {
        Action::Pick { object } => format!("grasp('{object}')"),
        Action::Place { pose, object } => match object {
            Some(o) => format!("place('{o}', {}, {})", list(&pose.position), list(&pose.orientation)),
            None => format!("place({}, {})", list(&pose.position), list(&pose.orientation)),
        },
        Action::Reach { pose } => format!("reach({}, {})", list(&pose.position), list(&pose.orientation)),
        Action::Reset => "reset()".into(),
        Action::Wait => "wait()".into(),
    }
}

pub fn render_dialect_actions(actions: &[Action]) -> String {
    let parts: Vec<String> = actions.iter().map(render_dialect_action).collect();
    format!("[{}]", parts.join(", "))
}
