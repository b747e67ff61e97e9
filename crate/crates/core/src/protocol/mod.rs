//! Text wire format between the planning loop and language-model backends.
//!
//! Numbers in observations and actions render as 2-decimal fixed point with
//! negative zero printed as `0.00`, so identical states always produce
//! identical prompt bytes.

mod dialect;
mod plan;
mod records;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::{Action, Observation, Pose7, SimConfig};

pub use dialect::{fmt_short, parse_dialect_actions, render_dialect_action, render_dialect_actions};
pub use plan::{parse_plan, parse_plan_strict, parse_verdict, render_plan, render_verdict, PlanOutput, Verdict};
pub use records::{
    parse_cot_input, parse_cot_output, parse_instruction_blocks, parse_task_list, render_cot_input, render_cot_output,
    render_instruction_block,
    CotInput, InstructionRecord, PastRound,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingSection,
    BadActionVerb,
    BadPoseArity,
    BadNumber,
    EmptyPlan,
    BadVerdictToken,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::MissingSection => "missing_section",
            ParseErrorKind::BadActionVerb => "bad_action_verb",
            ParseErrorKind::BadPoseArity => "bad_pose_arity",
            ParseErrorKind::BadNumber => "bad_number",
            ParseErrorKind::EmptyPlan => "empty_plan",
            ParseErrorKind::BadVerdictToken => "bad_verdict_token",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ParseErrorKind::MissingSection,
            ParseErrorKind::BadActionVerb,
            ParseErrorKind::BadPoseArity,
            ParseErrorKind::BadNumber,
            ParseErrorKind::EmptyPlan,
            ParseErrorKind::BadVerdictToken,
        ]
        .into_iter()
        .find(|k| k.as_str() == name)
    }

    /// One-line rule reminder used when reprompting after this error.
    pub fn rule(self) -> &'static str {
        match self {
            ParseErrorKind::MissingSection => "The response must contain an EXECUTE line followed by ACTION lines.",
            ParseErrorKind::BadActionVerb => "Each action line must be ACTION followed by one of PICK, PLACE, REACH, RESET, WAIT.",
            ParseErrorKind::BadPoseArity => "PLACE and REACH take a bracketed 7D vector: 3 position values then 4 quaternion values.",
            ParseErrorKind::BadNumber => "Pose values must be plain decimal numbers.",
            ParseErrorKind::EmptyPlan => "Give at least one action after EXECUTE.",
            ParseErrorKind::BadVerdictToken => "The first line must be exactly SUCCESS or FAIL.",
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parse failure with the 1-based line it was found on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind} at line {line}: {excerpt}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub excerpt: String,
}

pub const EXCERPT_LIMIT: usize = 120;

impl ParseError {
    pub fn new(kind: ParseErrorKind, line: usize, excerpt: &str) -> Self {
        ParseError {
            kind,
            line,
            excerpt: excerpt.chars().take(EXCERPT_LIMIT).collect(),
        }
    }
}

/// Fixed-point with 2 decimals, `-0.00` folded to `0.00`.
pub fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// Value `x` after a render/parse trip through [`fmt2`].
pub fn quantize(x: f64) -> f64 {
    fmt2(x).parse().expect("fmt2 output parses")
}

pub fn render_vector(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt2(*v)).collect();
    format!("[{}]", parts.join(" "))
}

fn render_tuple(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt2(*v)).collect();
    format!("({})", parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObsStyle {
    #[default]
    Vector,
    Prose,
}

/// `cubeA` -> `CubeA`.
pub fn display_label(id: &str) -> String {
    let mut c = id.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `cubeA` -> `Cube A`, as in the prose observation.
fn prose_label(id: &str) -> String {
    let label = display_label(id);
    match label.strip_prefix("Cube") {
        Some(rest) if !rest.is_empty() => format!("Cube {rest}"),
        _ => label,
    }
}

pub fn render_observation(obs: &Observation, style: ObsStyle, cfg: &SimConfig) -> String {
    match style {
        ObsStyle::Vector => {
            let mut parts: Vec<String> = obs
                .cube_poses
                .iter()
                .map(|(id, p)| format!("{}: {}", display_label(id), render_vector(&p.to_array())))
                .collect();
            parts.push(format!("EEF: {}", render_vector(&obs.eef_pose.to_array())));
            parts.push(format!("Force: {}", render_vector(&obs.force)));
            parts.push(format!("Gripper: {}", render_vector(&obs.gripper)));
            parts.join(" ")
        }
        ObsStyle::Prose => {
            let mut out = format!(
                "Table surface center is at {},Table surface size is ({} {})\n",
                render_tuple(&cfg.table_center),
                cfg.table_size[0],
                cfg.table_size[1]
            );
            for (id, p) in &obs.cube_poses {
                out.push_str(&format!(
                    "{} is at {}, with orientation {},",
                    prose_label(id),
                    render_tuple(&p.position),
                    render_tuple(&p.orientation)
                ));
            }
            out.push_str(&format!(
                " Robot State: End effector is at {}, with orientation {}, End effector hand force reading is {}, Gripper position is {}, {},",
                render_tuple(&obs.eef_pose.position),
                render_tuple(&obs.eef_pose.orientation),
                render_tuple(&obs.force),
                fmt2(obs.gripper[0]),
                fmt2(obs.gripper[1])
            ));
            out
        }
    }
}

/// Inverse of the vector style of [`render_observation`].
pub fn parse_observation(text: &str) -> Result<Observation, ParseError> {
    let re = regex::Regex::new(r"([A-Za-z][A-Za-z0-9_]*)\s*:\s*\[([^\]]*)\]").expect("static regex");
    let mut cube_poses = std::collections::BTreeMap::new();
    let (mut eef, mut force, mut gripper) = (None, None, None);
    for cap in re.captures_iter(text) {
        let label = &cap[1];
        let values = parse_numbers(&cap[2], 1, &cap[0])?;
        let need = |n: usize| -> Result<(), ParseError> {
            if values.len() == n {
                Ok(())
            } else {
                Err(ParseError::new(ParseErrorKind::BadPoseArity, 1, &cap[0]))
            }
        };
        match label {
            "EEF" => {
                need(7)?;
                eef = Pose7::from_slice(&values);
            }
            "Force" => {
                need(3)?;
                force = Some([values[0], values[1], values[2]]);
            }
            "Gripper" => {
                need(2)?;
                gripper = Some([values[0], values[1]]);
            }
            _ => {
                need(7)?;
                let mut chars = label.chars();
                let id: String = chars
                    .next()
                    .map(|c| c.to_lowercase().chain(chars).collect())
                    .unwrap_or_default();
                cube_poses.insert(id, Pose7::from_slice(&values).expect("arity checked"));
            }
        }
    }
    let missing = |name: &str| ParseError::new(ParseErrorKind::MissingSection, 1, &format!("no {name} entry"));
    Ok(Observation {
        cube_poses,
        eef_pose: eef.ok_or_else(|| missing("EEF"))?,
        force: force.ok_or_else(|| missing("Force"))?,
        gripper: gripper.ok_or_else(|| missing("Gripper"))?,
    })
}

/// Observation with every value passed through [`quantize`].
pub fn quantize_observation(obs: &Observation) -> Observation {
    let q = |p: &Pose7| {
        let a = p.to_array().map(quantize);
        Pose7::from_slice(&a).expect("7 values")
    };
    Observation {
        cube_poses: obs.cube_poses.iter().map(|(k, p)| (k.clone(), q(p))).collect(),
        eef_pose: q(&obs.eef_pose),
        force: obs.force.map(quantize),
        gripper: obs.gripper.map(quantize),
    }
}

/// Split on whitespace and commas; every token must be a finite decimal.
pub(crate) fn parse_numbers(body: &str, line: usize, excerpt: &str) -> Result<Vec<f64>, ParseError> {
    body.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(ParseError::new(ParseErrorKind::BadNumber, line, excerpt)),
        })
        .collect()
}

/// `PICK cubeA`, `PLACE [0.17 -0.03 1.10 1.00 0.00 0.00 0.00]`, ...
pub fn render_action(action: &Action) -> String {
    match action {
        Action::Pick { object } => format!("PICK {object}"),
        Action::Place { pose, .. } => format!("PLACE {}", render_vector(&pose.to_array())),
        Action::Reach { pose } => format!("REACH {}", render_vector(&pose.to_array())),
        Action::Reset => "RESET".into(),
        Action::Wait => "WAIT".into(),
    }
}

/// Action with pose values passed through [`quantize`].
pub fn quantize_action(action: &Action) -> Action {
    let q = |p: &Pose7| Pose7::from_slice(&p.to_array().map(quantize)).expect("7 values");
    match action {
        Action::Place { pose, object } => Action::Place {
            pose: q(pose),
            object: object.clone(),
        },
        Action::Reach { pose } => Action::Reach { pose: q(pose) },
        other => other.clone(),
    }
}

/// One executed round as shown in the history section.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRound {
    pub explanation: String,
    pub steps: Vec<(Action, Observation)>,
}

/// History text: `== Round k ==` blocks, or `None.` when empty.
pub fn render_history(rounds: &[HistoryRound]) -> String {
    if rounds.is_empty() {
        return "None.".into();
    }
    let cfg = SimConfig::default();
    let mut out = String::new();
    for (k, round) in rounds.iter().enumerate() {
        out.push_str(&format!("== Round {k} ==\n[Response History]\n"));
        out.push_str(&format!("Plan explanation: {}\n", round.explanation.trim()));
        for (i, (action, obs)) in round.steps.iter().enumerate() {
            out.push_str(&format!("Action {i}: {}\n", render_action(action)));
            out.push_str(&format!(
                "Observation after step {i}: {}\n\n",
                render_observation(obs, ObsStyle::Vector, &cfg)
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EEF_DOWN;

    fn sample_obs() -> Observation {
        Observation {
            cube_poses: [
                ("cubeA".to_string(), Pose7::new([0.11, 0.13, 1.2], [0.01, 0.0, 0.39, 0.92])),
                ("cubeB".to_string(), Pose7::new([0.18, -0.03, 1.05], [-0.0, 0.0, -0.12, 0.99])),
            ]
            .into(),
            eef_pose: Pose7::new([0.0, 0.0, 1.2], EEF_DOWN),
            force: [0.0; 3],
            gripper: [0.04, 0.04],
        }
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fmt2(-0.0), "0.00");
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(fmt2(-0.03), "-0.03");
    }

    #[test]
    fn vector_observation_matches_transcript_layout() {
        let text = render_observation(&sample_obs(), ObsStyle::Vector, &SimConfig::default());
        assert!(text.starts_with("CubeA: [0.11 0.13 1.20 0.01 0.00 0.39 0.92] CubeB: [0.18 -0.03 1.05 0.00 0.00 -0.12 0.99]"));
        assert!(text.contains("EEF: [0.00 0.00 1.20 1.00 0.00 0.00 0.00]"));
        assert!(text.contains("Force: [0.00 0.00 0.00]"));
        assert!(text.ends_with("Gripper: [0.04 0.04]"));
        assert_eq!(parse_observation(&text).unwrap(), quantize_observation(&sample_obs()));
    }

    #[test]
    fn prose_observation_mentions_table() {
        let text = render_observation(&sample_obs(), ObsStyle::Prose, &SimConfig::default());
        assert!(text.starts_with("Table surface center is at (0.00 0.00),Table surface size is (0.8 0.8)\n"));
        assert!(text.contains("Cube A is at (0.11 0.13 1.20), with orientation (0.01 0.00 0.39 0.92),"));
        assert!(text.contains("Gripper position is 0.04, 0.04,"));
    }

    #[test]
    fn history_rendering() {
        assert_eq!(render_history(&[]), "None.");
        let r = HistoryRound {
            explanation: "Weigh both.".into(),
            steps: vec![(Action::pick("cubeA"), sample_obs()), (Action::Reset, sample_obs())],
        };
        let one = render_history(std::slice::from_ref(&r));
        assert!(one.starts_with("== Round 0 ==\n"));
        assert!(one.contains("Action 0: PICK cubeA\nObservation after step 0: CubeA"));
        assert!(one.contains("Action 1: RESET\n"));
        assert!(!one.contains("Action 2"));
        let two = render_history(&[r.clone(), r]);
        assert!(two.starts_with(&one));
        assert!(two.contains("== Round 1 =="));
    }
}
