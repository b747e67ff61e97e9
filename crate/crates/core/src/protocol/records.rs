//! Task lists and chain-of-thought instruction records from the generator
//! prompts.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::dialect::{bracketed_prefix, fmt_short};
use super::{parse_dialect_actions, parse_numbers, render_dialect_actions, ParseError, ParseErrorKind};
use crate::sim::Action;
use crate::task::{split_tag_prefix, TaskSpec};

/// Parse `### Task N: <tags>description` lines. Unknown tags and malformed
/// headers are skipped with a warning.
pub fn parse_task_list(text: &str) -> Result<Vec<TaskSpec>, ParseError> {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    let header = HEADER.get_or_init(|| Regex::new(r"^\s*#{3}\s*Task\s+(\d+)\s*:\s*(.*?)\s*$").expect("static regex"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(cap) = header.captures(line) else {
            let t = line.trim();
            if t.starts_with('#') || t.starts_with('<') {
                log::warn!("line {}: not a task header, skipped: {t}", i + 1);
            }
            continue;
        };
        let (tags, mut desc, unknown) = split_tag_prefix(&cap[2]);
        if !unknown.is_empty() {
            log::warn!("line {}: unknown tags {unknown:?}, task skipped", i + 1);
            continue;
        }
        let exploration = desc.ends_with('*');
        if exploration {
            desc = desc.trim_end_matches('*').trim_end().to_string();
        }
        if desc.is_empty() {
            log::warn!("line {}: empty task description, skipped", i + 1);
            continue;
        }
        let mut task = TaskSpec::new(&cap[1], tags, desc);
        task.exploration_needed = exploration;
        out.push(task);
    }
    if out.is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptyPlan, 1, "no task headers found"));
    }
    Ok(out)
}

/// One round of the `Past:` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastRound {
    pub index: usize,
    pub text: String,
    pub actions: Vec<Action>,
    pub observations: Vec<Vec<f64>>,
}

/// The `<input>` of an instruction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotInput {
    pub current: Vec<f64>,
    pub past: Vec<PastRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub index: usize,
    pub task: String,
    /// The question asked, without the environment and task lines.
    pub instruction: String,
    pub input: CotInput,
    pub output_verbal: String,
    pub output_actions: Vec<Action>,
}

fn vec_text(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt_short(*v)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn render_cot_input(input: &CotInput) -> String {
    let mut out = format!("Current:\n{}\nPast:\n", vec_text(&input.current));
    if input.past.is_empty() {
        out.push_str("[] [] []\n");
    }
    for r in &input.past {
        let obs: Vec<String> = r.observations.iter().map(|o| vec_text(o)).collect();
        out.push_str(&format!(
            "Round {}: [{}] {} [{}]\n",
            r.index,
            r.text,
            render_dialect_actions(&r.actions),
            obs.join(", ")
        ));
    }
    out
}

/// Bracket group at the start of `text` ignoring quotes; free text may
/// contain apostrophes.
fn plain_group(text: &str) -> Option<&str> {
    let t = text.trim_start();
    let offset = text.len() - t.len();
    if !t.starts_with('[') {
        return None;
    }
    let mut depth = 0usize;
    for (i, c) in t.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[offset..offset + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn after<'a>(text: &'a str, group: &str) -> &'a str {
    let start = text.find(group).map(|i| i + group.len()).unwrap_or(text.len());
    &text[start..]
}

fn parse_vector_list(group: &str, line: usize) -> Result<Vec<Vec<f64>>, ParseError> {
    let inner = &group[1..group.len() - 1];
    let mut out = Vec::new();
    let mut rest = inner.trim_start_matches([',', ' ']);
    while let Some(g) = plain_group(rest) {
        out.push(parse_numbers(&g[1..g.len() - 1], line, g)?);
        rest = after(rest, g).trim_start_matches([',', ' ']);
    }
    if !rest.trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::BadNumber, line, rest));
    }
    Ok(out)
}

/// Parse `Current:\n[...]\nPast:\n...`.
pub fn parse_cot_input(text: &str) -> Result<CotInput, ParseError> {
    static ROUND: OnceLock<Regex> = OnceLock::new();
    let round_re = ROUND.get_or_init(|| Regex::new(r"^Round\s+(\d+)\s*:\s*(.*)$").expect("static regex"));
    let missing = |what: &str| ParseError::new(ParseErrorKind::MissingSection, 1, what);
    let cur_at = text.find("Current:").ok_or_else(|| missing("no Current: section"))?;
    let past_at = text.find("Past:").ok_or_else(|| missing("no Past: section"))?;
    let cur_text = &text[cur_at + "Current:".len()..past_at];
    let group = plain_group(cur_text).ok_or_else(|| missing("no current observation vector"))?;
    let current = parse_numbers(&group[1..group.len() - 1], 1, group)?;

    let mut past = Vec::new();
    for (i, line) in text[past_at + "Past:".len()..].lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.replace(' ', "") == "[][][]" {
            continue;
        }
        let lineno = i + 2;
        let cap = round_re
            .captures(t)
            .ok_or_else(|| ParseError::new(ParseErrorKind::MissingSection, lineno, t))?;
        let rest = cap.get(2).map_or("", |m| m.as_str());
        let text_group = plain_group(rest).ok_or_else(|| ParseError::new(ParseErrorKind::MissingSection, lineno, t))?;
        let rest = after(rest, text_group);
        let action_group = bracketed_prefix(rest.trim_start())
            .ok_or_else(|| ParseError::new(ParseErrorKind::MissingSection, lineno, t))?;
        let actions = parse_dialect_actions(action_group).map_err(|e| ParseError { line: lineno, ..e })?;
        let rest = after(rest, action_group);
        let obs_group = plain_group(rest).ok_or_else(|| ParseError::new(ParseErrorKind::MissingSection, lineno, t))?;
        past.push(PastRound {
            index: cap[1].parse().expect("digits"),
            text: text_group[1..text_group.len() - 1].to_string(),
            actions,
            observations: parse_vector_list(obs_group, lineno)?,
        });
    }
    Ok(CotInput { current, past })
}

pub fn render_cot_output(verbal: &str, actions: &[Action]) -> String {
    let acts = if actions.is_empty() {
        "<nooutput>".to_string()
    } else {
        render_dialect_actions(actions)
    };
    format!("EXPLAIN: {}\nACTION: {acts}.", verbal.trim())
}

/// Split an output into verbal text and actions. Accepts `EXPLAIN:` /
/// `ACTION:` and `[verbal]` / `[action]` markers.
pub fn parse_cot_output(text: &str) -> Result<(String, Vec<Action>), ParseError> {
    let markers = [("EXPLAIN:", "ACTION:"), ("[verbal]", "[action]")];
    for (v, a) in markers {
        if let (Some(vi), Some(ai)) = (text.find(v), text.find(a)) {
            if ai > vi {
                let verbal = text[vi + v.len()..ai].trim().to_string();
                let actions = parse_dialect_actions(&text[ai + a.len()..])?;
                return Ok((verbal, actions));
            }
        }
    }
    Err(ParseError::new(ParseErrorKind::MissingSection, 1, text))
}

/// One record in the instruction-generation block layout, accepted back by
/// [`parse_instruction_blocks`].
pub fn render_instruction_block(rec: &InstructionRecord) -> String {
    let acts = if rec.output_actions.is_empty() {
        "<nooutput>".to_string()
    } else {
        render_dialect_actions(&rec.output_actions)
    };
    format!(
        "###\n{}.\n<Task> {}\n<Instruction> {}\n<Input> {}<Output>\n[verbal] {}\n[action] {acts}\n",
        rec.index,
        rec.task,
        rec.instruction,
        render_cot_input(&rec.input),
        rec.output_verbal.trim()
    )
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Separate `Task:` and `Environment:` lines from the question.
fn split_instruction(text: &str) -> (Option<String>, String) {
    let mut task = None;
    let mut question = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(t) = line.strip_prefix("Task:") {
            task = Some(t.trim().to_string());
        } else if !line.starts_with("Environment:") {
            question.push(line);
        }
    }
    (task, question.join(" "))
}

fn regexes() -> &'static [Regex; 4] {
    static RES: OnceLock<[Regex; 4]> = OnceLock::new();
    RES.get_or_init(|| {
        let quoted = |name: &str| Regex::new(&format!(r#"(?is)<{name}>\s*:\s*"((?:[^"\\]|\\.)*)""#)).expect("static regex");
        [
            Regex::new(r"(?m)^[\s{},]*(\d+)\.\s*\{?\s*$").expect("static regex"),
            quoted("instruction"),
            quoted("input"),
            quoted("output"),
        ]
    })
}

fn parse_block(index: usize, block: &str) -> Option<InstructionRecord> {
    let [_, re_instr, re_input, re_output] = regexes();
    let (task, instruction, input, output) = if let Some(ci) = re_instr.captures(block) {
        let input = unescape(&re_input.captures(block)?[1]);
        let output = unescape(&re_output.captures(block)?[1]);
        let (task, q) = split_instruction(&unescape(&ci[1]));
        (task.unwrap_or_default(), q, input, output)
    } else {
        static A4: OnceLock<Regex> = OnceLock::new();
        let re = A4.get_or_init(|| {
            Regex::new(r"(?s)<Task>\s*(.*?)\s*<Instruction>\s*(.*?)\s*<Input>\s*(.*?)\s*<Output>\s*(.*)").expect("static regex")
        });
        let cap = re.captures(block)?;
        let output: Vec<&str> = cap[4]
            .lines()
            .filter(|l| !l.trim_start().starts_with("//") && l.trim() != "###")
            .collect();
        let (_, q) = split_instruction(&cap[2]);
        (cap[1].trim().to_string(), q, cap[3].to_string(), output.join("\n"))
    };
    let input = match parse_cot_input(&input) {
        Ok(i) => i,
        Err(e) => {
            log::warn!("instruction block {index}: bad input: {e}");
            return None;
        }
    };
    let (verbal, actions) = match parse_cot_output(&output) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("instruction block {index}: bad output: {e}");
            return None;
        }
    };
    Some(InstructionRecord {
        index,
        task,
        instruction,
        input,
        output_verbal: verbal,
        output_actions: actions,
    })
}

/// Split generator output into numbered blocks and parse each. Blocks with
/// a missing field are skipped with a warning.
pub fn parse_instruction_blocks(text: &str) -> Result<Vec<InstructionRecord>, ParseError> {
    let [re_index, ..] = regexes();
    let marks: Vec<(usize, usize, usize)> = re_index
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (m.start(), m.end(), c[1].parse().unwrap_or(0))
        })
        .collect();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, (_, end, index)) in marks.iter().enumerate() {
        let stop = marks.get(k + 1).map_or(text.len(), |m| m.0);
        let block = &text[*end..stop];
        match parse_block(*index, block) {
            Some(rec) => {
                if !seen.insert(rec.index) {
                    log::warn!("instruction block index {} repeated", rec.index);
                }
                out.push(rec);
            }
            None => log::warn!("instruction block {index} skipped: missing instruction, input or output"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Tag;

    #[test]
    fn task_headers() {
        let tasks = parse_task_list(
            "### Task 1: <weight> Pick up the heavier block*\n### Task 5: <three> Stack the three blocks\n<weight> no header\n",
        )
        .unwrap();
        assert_eq!(tasks.len(), 2);
        assert!(tasks[0].has(Tag::Mass) && tasks[0].exploration_needed);
        assert_eq!(tasks[0].description, "Pick up the heavier block");
        assert!(tasks[1].has(Tag::Three) && !tasks[1].exploration_needed);
        assert_eq!(tasks[1].id, "5");
        assert!(parse_task_list("nothing here").is_err());
        assert!(parse_task_list("### Task 1: <heavy> Lift it").is_err());
    }

    #[test]
    fn cot_input_round_trip() {
        let input = CotInput {
            current: vec![0.27, 0.12, 1.025],
            past: vec![PastRound {
                index: 2,
                text: "The robot doesn't know.".into(),
                actions: vec![Action::pick("cubeA")],
                observations: vec![vec![0.1, -1.8], vec![0.0, 1.2]],
            }],
        };
        let text = render_cot_input(&input);
        assert_eq!(parse_cot_input(&text).unwrap(), input);
        let empty = CotInput { current: vec![1.0], past: vec![] };
        assert_eq!(render_cot_input(&empty), "Current:\n[1]\nPast:\n[] [] []\n");
        assert_eq!(parse_cot_input(&render_cot_input(&empty)).unwrap(), empty);
    }

    #[test]
    fn instructgen_style_block() {
        let text = "###\n1.\n<Task> <weight> Pick up the heavier block*\n<Instruction> What are the actions the robot should take to gather information?\n<Input> Current:\n[0.1, 0.2]\nPast:\n[] [] []\n<Output>\n[verbal] Lift both blocks.\n[action] [grasp('cubeA'), reset()]\n";
        let recs = parse_instruction_blocks(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].task, "<weight> Pick up the heavier block*");
        assert_eq!(recs[0].output_actions, vec![Action::pick("cubeA"), Action::Reset]);
        assert_eq!(recs[0].output_verbal, "Lift both blocks.");
        let again = parse_instruction_blocks(&render_instruction_block(&recs[0])).unwrap();
        assert_eq!(again, recs);
    }
}
