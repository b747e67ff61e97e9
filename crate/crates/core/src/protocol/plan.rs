use serde::{Deserialize, Serialize};

use super::{parse_numbers, render_action, ParseError, ParseErrorKind};
use crate::sim::{Action, Pose7};

/// Parsed planner response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub explanation: String,
    pub actions: Vec<Action>,
}

/// Parsed evaluator response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub done: bool,
    pub rationale: String,
}

pub fn render_plan(plan: &PlanOutput) -> String {
    let mut out = String::new();
    if !plan.explanation.trim().is_empty() {
        out.push_str("EXPLAIN\n");
        out.push_str(plan.explanation.trim());
        out.push('\n');
    }
    out.push_str("EXECUTE\n");
    for a in &plan.actions {
        out.push_str("ACTION ");
        out.push_str(&render_action(a));
        out.push('\n');
    }
    out
}

pub fn render_verdict(v: &Verdict) -> String {
    format!("{}\n{}", if v.done { "SUCCESS" } else { "FAIL" }, v.rationale.trim())
}

/// Strip markdown emphasis and a trailing colon from a section marker line.
fn marker(line: &str) -> String {
    line.trim().trim_matches('*').trim().trim_end_matches(':').trim().to_string()
}

/// Lenient plan parser: prose after the last valid action is dropped with
/// a warning.
pub fn parse_plan(text: &str) -> Result<PlanOutput, ParseError> {
    parse_plan_inner(text, false)
}

/// Like [`parse_plan`] but trailing prose is an error.
pub fn parse_plan_strict(text: &str) -> Result<PlanOutput, ParseError> {
    parse_plan_inner(text, true)
}

fn parse_plan_inner(text: &str, strict: bool) -> Result<PlanOutput, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let Some(exec_at) = lines.iter().position(|l| marker(l) == "EXECUTE") else {
        let last = lines.len().max(1);
        return Err(ParseError::new(ParseErrorKind::MissingSection, last, "no EXECUTE line"));
    };

    let mut explanation = Vec::new();
    for line in &lines[..exec_at] {
        let t = line.trim();
        let m = marker(t);
        if m == "EXPLAIN" {
            continue;
        }
        let body = t
            .trim_start_matches('*')
            .strip_prefix("EXPLAIN")
            .map(|rest| rest.trim_start_matches(['*', ':']).trim())
            .unwrap_or(t);
        if !body.is_empty() {
            explanation.push(body.to_string());
        }
    }

    let mut actions = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(exec_at + 1) {
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let Some(rest) = t.strip_prefix("ACTION") else {
            if !actions.is_empty() && !strict {
                log::warn!("ignoring text after the last action at line {lineno}: {t}");
                break;
            }
            return Err(ParseError::new(ParseErrorKind::BadActionVerb, lineno, t));
        };
        if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
            return Err(ParseError::new(ParseErrorKind::BadActionVerb, lineno, t));
        }
        actions.push(parse_action(rest.trim(), lineno, t)?);
    }
    if actions.is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptyPlan, exec_at + 1, lines[exec_at]));
    }
    Ok(PlanOutput {
        explanation: explanation.join("\n"),
        actions,
    })
}

fn parse_action(body: &str, line: usize, excerpt: &str) -> Result<Action, ParseError> {
    let (verb, arg) = match body.find(char::is_whitespace) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    };
    match verb.to_ascii_uppercase().as_str() {
        "PICK" => {
            let object = arg.split_whitespace().next().unwrap_or("");
            let valid = object.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && object.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(ParseError::new(ParseErrorKind::BadActionVerb, line, excerpt));
            }
            Ok(Action::pick(object))
        }
        "PLACE" => Ok(Action::place(parse_pose(arg, line, excerpt)?)),
        "REACH" => Ok(Action::reach(parse_pose(arg, line, excerpt)?)),
        "RESET" => Ok(Action::Reset),
        "WAIT" => Ok(Action::Wait),
        _ => Err(ParseError::new(ParseErrorKind::BadActionVerb, line, excerpt)),
    }
}

fn parse_pose(arg: &str, line: usize, excerpt: &str) -> Result<Pose7, ParseError> {
    let (Some(open), Some(close)) = (arg.find('['), arg.find(']')) else {
        return Err(ParseError::new(ParseErrorKind::BadPoseArity, line, excerpt));
    };
    if close < open {
        return Err(ParseError::new(ParseErrorKind::BadPoseArity, line, excerpt));
    }
    let values = parse_numbers(&arg[open + 1..close], line, excerpt)?;
    if values.len() != 7 {
        return Err(ParseError::new(ParseErrorKind::BadPoseArity, line, excerpt));
    }
    let pose = Pose7::from_slice(&values).expect("arity checked");
    if pose.quat_norm() == 0.0 {
        return Err(ParseError::new(ParseErrorKind::BadNumber, line, excerpt));
    }
    Ok(pose)
}

/// First non-blank line is exactly `SUCCESS` or `FAIL`; the rest is the
/// rationale.
pub fn parse_verdict(text: &str) -> Result<Verdict, ParseError> {
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.trim().is_empty());
    let Some((i, first)) = lines.next() else {
        return Err(ParseError::new(ParseErrorKind::BadVerdictToken, 1, ""));
    };
    let done = match first.trim() {
        "SUCCESS" => true,
        "FAIL" => false,
        other => return Err(ParseError::new(ParseErrorKind::BadVerdictToken, i + 1, other)),
    };
    let rationale: Vec<&str> = lines.map(|(_, l)| l.trim()).filter(|l| !l.is_empty()).collect();
    if rationale.is_empty() {
        return Err(ParseError::new(ParseErrorKind::MissingSection, i + 2, "no rationale after the verdict"));
    }
    Ok(Verdict {
        done,
        rationale: rationale.join("\n"),
    })
}
