//! Prompt templates for the planner, evaluator, task generator and
//! instruction generator.
//!
//! Template text lives in `templates/` next to a `manifest.toml` that maps
//! ids to files and declares each template's placeholders. The bundled set is
//! compiled in; [`TemplateSet::load_dir`] reads an edited copy from disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{fmt2, render_history, render_instruction_block, render_observation, HistoryRound, InstructionRecord, ObsStyle};
use crate::sim::{Observation, SimConfig};
use crate::task::{cube_ids, Tag, TaskSpec};

/// The standard chain-of-thought questions, in the order they are asked.
pub const COT_QUESTIONS: [&str; 3] = [
    "Is the current information enough to solve the task? If not, what information is missing?",
    "What are the actions the robot should take to gather information?",
    "What are the actions the robot should take to solve the task?",
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template}: missing field {field}")]
    MissingField { template: String, field: String },
    #[error("template {template}: field {field} is not declared")]
    UnknownField { template: String, field: String },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {template}: placeholders {found:?} do not match declared fields {declared:?}")]
    FieldMismatch {
        template: String,
        found: BTreeSet<String>,
        declared: BTreeSet<String>,
    },
    #[error("template manifest: {0}")]
    Manifest(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Field(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    If(String),
    Unless(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub condition: Option<Condition>,
    pub text: String,
    pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub sections: Vec<Section>,
    pub fields: BTreeSet<String>,
}

/// Split template text into literal runs and placeholders.
fn tokenize(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("{{") || rest.starts_with("}}") {
            lit.push(c);
            rest = &rest[2..];
            continue;
        }
        if c == '{' {
            if let Some(end) = rest.find('}') {
                let name = &rest[1..end];
                let ident = name.chars().next().is_some_and(|f| f.is_ascii_alphabetic() || f == '_')
                    && name.chars().all(|f| f.is_ascii_alphanumeric() || f == '_');
                if ident {
                    out.push(Piece::Text(std::mem::take(&mut lit)));
                    out.push(Piece::Field(name.to_string()));
                    rest = &rest[end + 1..];
                    continue;
                }
            }
        }
        if c == '<' {
            if let Some(end) = rest.find('>') {
                if let Some(name) = rest[1..end].strip_suffix(" PLACEHOLDER") {
                    if !name.is_empty() && name.chars().all(|f| f.is_ascii_uppercase() || f == ' ') {
                        out.push(Piece::Text(std::mem::take(&mut lit)));
                        out.push(Piece::Field(name.to_string()));
                        rest = &rest[end + 1..];
                        continue;
                    }
                }
            }
        }
        lit.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out.push(Piece::Text(lit));
    out.retain(|p| !matches!(p, Piece::Text(t) if t.is_empty()));
    out
}

impl PromptTemplate {
    pub fn parse(id: &str, text: &str, declared: &[String]) -> Result<Self, TemplateError> {
        let mut sections: Vec<(String, Option<Condition>, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            if let Some(header) = line.strip_prefix("@@ ") {
                let words: Vec<&str> = header.split_whitespace().collect();
                let cond = match words.as_slice() {
                    [_] => None,
                    [_, "if", f] => Some(Condition::If(f.to_string())),
                    [_, "unless", f] => Some(Condition::Unless(f.to_string())),
                    _ => return Err(TemplateError::Manifest(format!("{id}: bad section header {line:?}"))),
                };
                sections.push((words[0].to_string(), cond, Vec::new()));
            } else {
                if sections.is_empty() {
                    sections.push(("body".into(), None, Vec::new()));
                }
                sections.last_mut().expect("just pushed").2.push(line);
            }
        }
        let mut found = BTreeSet::new();
        let sections: Vec<Section> = sections
            .into_iter()
            .map(|(name, condition, lines)| {
                let mut text = lines.join("\n");
                text.push('\n');
                let pieces = tokenize(&text);
                for p in &pieces {
                    if let Piece::Field(f) = p {
                        found.insert(f.clone());
                    }
                }
                if let Some(Condition::If(f) | Condition::Unless(f)) = &condition {
                    found.insert(f.clone());
                }
                Section {
                    name,
                    condition,
                    text,
                    pieces,
                }
            })
            .collect();
        let declared: BTreeSet<String> = declared.iter().cloned().collect();
        if found != declared {
            return Err(TemplateError::FieldMismatch {
                template: id.to_string(),
                found,
                declared,
            });
        }
        Ok(PromptTemplate {
            id: id.to_string(),
            sections,
            fields: declared,
        })
    }

    /// Fill placeholders. A field missing from `values` drops the sections
    /// conditioned on it; a placeholder in a kept section must be present.
    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        if let Some(extra) = values.keys().find(|k| !self.fields.contains(*k)) {
            return Err(TemplateError::UnknownField {
                template: self.id.clone(),
                field: extra.clone(),
            });
        }
        let mut out = String::new();
        for s in &self.sections {
            let keep = match &s.condition {
                None => true,
                Some(Condition::If(f)) => values.contains_key(f),
                Some(Condition::Unless(f)) => !values.contains_key(f),
            };
            if !keep {
                continue;
            }
            for p in &s.pieces {
                match p {
                    Piece::Text(t) => out.push_str(t),
                    Piece::Field(f) => out.push_str(values.get(f).ok_or_else(|| TemplateError::MissingField {
                        template: self.id.clone(),
                        field: f.clone(),
                    })?),
                }
            }
        }
        Ok(out)
    }

    /// Render a one-paragraph fragment, without the trailing newline.
    fn fragment(&self, values: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let mut s = self.render(values)?;
        while s.ends_with('\n') {
            s.pop();
        }
        Ok(s)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    templates: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    file: String,
    fields: Vec<String>,
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../templates/", $name)))),*]
    };
}

static BUNDLED: &[(&str, &str)] = bundled!(
    "environment_paper.txt",
    "environment_sim.txt",
    "action_options.txt",
    "output_instruction.txt",
    "output_examples.txt",
    "planner.txt",
    "evaluator.txt",
    "blockworld.txt",
    "task_gen.txt",
    "function_list.txt",
    "instruct_gen.txt",
);

/// All templates named in one manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    fn from_manifest(manifest: &str, read: impl Fn(&str) -> Result<String, TemplateError>) -> Result<Self, TemplateError> {
        let m: ManifestFile = toml::from_str(manifest).map_err(|e| TemplateError::Manifest(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (id, entry) in m.templates {
            let text = read(&entry.file)?;
            templates.insert(id.clone(), PromptTemplate::parse(&id, &text, &entry.fields)?);
        }
        for required in REQUIRED {
            if !templates.contains_key(*required) {
                return Err(TemplateError::UnknownTemplate(required.to_string()));
            }
        }
        Ok(TemplateSet { templates })
    }

    /// The set compiled into the binary.
    pub fn bundled() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            TemplateSet::from_manifest(include_str!("../templates/manifest.toml"), |file| {
                BUNDLED
                    .iter()
                    .find(|(n, _)| *n == file)
                    .map(|(_, t)| t.to_string())
                    .ok_or_else(|| TemplateError::Manifest(format!("{file} is not bundled")))
            })
            .expect("bundled templates are valid")
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| TemplateError::Io(p.display().to_string(), e));
        let manifest = read(&dir.join("manifest.toml"))?;
        TemplateSet::from_manifest(&manifest, |file| read(&dir.join(file)))
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates.get(id).ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

const REQUIRED: &[&str] = &[
    "environment_paper",
    "environment_sim",
    "action_options",
    "output_instruction",
    "output_examples",
    "planner",
    "evaluator",
    "blockworld",
    "task_gen",
    "function_list",
    "instruct_gen",
];

fn values<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Which gripper sentence the environment paragraph carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvVariant {
    /// Wording of the published prompt: 0.04 per finger called "closed".
    Paper,
    /// Wording that matches the simulator: 0.04 per finger is open.
    #[default]
    SimConsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub environment_description: String,
    pub action_options: String,
    pub output_instruction: String,
    pub output_examples: String,
    pub task_description: String,
    pub history_text: String,
    pub current_observation_text: String,
    /// Evaluator verdict for this round; `None` when the evaluator is off.
    pub evaluation_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorContext {
    pub environment_description: String,
    pub task_description: String,
    pub history_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGenConfig {
    pub count: usize,
    /// (marker, meaning) in display order.
    pub tags: Vec<(String, String)>,
    pub nonsolvable_percent: u32,
    pub examples: Vec<String>,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            count: 50,
            tags: default_tag_lines(),
            nonsolvable_percent: 30,
            examples: vec![
                "<move> find the movable cube and place it on top of the other block.*".into(),
                "<weight> move the heavier block to the corner of the table.*".into(),
                "<three><weight> sort all the blocks by their weight.*".into(),
                "<three> stack the three blocks.".into(),
            ],
        }
    }
}

fn default_tag_lines() -> Vec<(String, String)> {
    [
        (Tag::Mass, "The blocks have randomized weights."),
        (
            Tag::Fix,
            "The blocks are randomly determined to be movable or not; at least one block is movable.",
        ),
        (Tag::Three, "There are three blocks in the environment."),
    ]
    .into_iter()
    .map(|(t, d)| (t.generator_marker().to_string(), d.to_string()))
    .collect()
}

fn tag_block(tags: &[(String, String)]) -> String {
    tags.iter().map(|(m, d)| format!("{m} {d}")).collect::<Vec<_>>().join("\n")
}

/// `History` placeholder value: ` None.` on the header line, or the rounds
/// below it.
fn history_field(text: &str) -> String {
    let t = text.trim_end();
    if t == "None." || t.is_empty() {
        " None.".into()
    } else {
        format!("\n{t}")
    }
}

/// `cubeA or cubeB`, `cubeA, cubeB or cubeC`.
fn object_choices(ids: &[String]) -> String {
    match ids {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} or {last}", init.join(", ")),
    }
}

/// Renders the four prompt families from one template set.
#[derive(Debug, Clone)]
pub struct Prompts {
    pub set: TemplateSet,
    pub variant: EnvVariant,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts::new(EnvVariant::default())
    }
}

impl Prompts {
    pub fn new(variant: EnvVariant) -> Self {
        Prompts {
            set: TemplateSet::bundled().clone(),
            variant,
        }
    }

    /// Environment paragraph with physical constants taken from `sim`.
    pub fn environment(&self, sim: &SimConfig) -> Result<String, TemplateError> {
        let mut v = values([
            ("cube_size", format!("{}", sim.cube_size)),
            ("finger_open", fmt2(sim.finger_open)),
            ("finger_closed", fmt2(0.0)),
        ]);
        let id = match self.variant {
            EnvVariant::Paper => "environment_paper",
            EnvVariant::SimConsistent => {
                v.insert("finger_on_cube".into(), fmt2(sim.finger_on_cube));
                "environment_sim"
            }
        };
        self.set.get(id)?.fragment(&v)
    }

    pub fn planner_context(
        &self,
        task: &TaskSpec,
        sim: &SimConfig,
        history: &[HistoryRound],
        obs: &Observation,
        evaluation: Option<&str>,
    ) -> Result<PlannerContext, TemplateError> {
        let ids = cube_ids(task.cube_count());
        Ok(PlannerContext {
            environment_description: self.environment(sim)?,
            action_options: self
                .set
                .get("action_options")?
                .fragment(&values([("object_choices", object_choices(&ids))]))?,
            output_instruction: self.set.get("output_instruction")?.fragment(&BTreeMap::new())?,
            output_examples: self.set.get("output_examples")?.fragment(&BTreeMap::new())?,
            task_description: task.prompt_text(),
            history_text: render_history(history),
            current_observation_text: render_observation(obs, ObsStyle::Prose, sim),
            evaluation_text: evaluation.map(|e| e.trim().to_string()),
        })
    }

    pub fn evaluator_context(&self, task: &TaskSpec, sim: &SimConfig, history: &[HistoryRound]) -> Result<EvaluatorContext, TemplateError> {
        Ok(EvaluatorContext {
            environment_description: self.environment(sim)?,
            task_description: task.prompt_text(),
            history_text: render_history(history),
        })
    }

    pub fn render_planner(&self, ctx: &PlannerContext) -> Result<String, TemplateError> {
        if ctx.task_description.trim().is_empty() {
            return Err(TemplateError::MissingField {
                template: "planner".into(),
                field: "task".into(),
            });
        }
        let mut v = values([
            ("environment", ctx.environment_description.clone()),
            ("task", ctx.task_description.clone()),
            ("action_options", ctx.action_options.clone()),
            ("output_instruction", ctx.output_instruction.clone()),
            ("output_examples", ctx.output_examples.clone()),
            ("history", history_field(&ctx.history_text)),
            ("observation", ctx.current_observation_text.clone()),
        ]);
        if let Some(e) = &ctx.evaluation_text {
            v.insert("evaluation".into(), e.clone());
        }
        self.set.get("planner")?.render(&v)
    }

    pub fn render_evaluator(&self, ctx: &EvaluatorContext) -> Result<String, TemplateError> {
        let v = values([
            ("environment", ctx.environment_description.clone()),
            ("task", ctx.task_description.clone()),
            ("history", history_field(&ctx.history_text)),
        ]);
        self.set.get("evaluator")?.render(&v)
    }

    /// The generator's environment paragraph, shared by task and
    /// instruction generation.
    pub fn blockworld(&self) -> Result<String, TemplateError> {
        self.set
            .get("blockworld")?
            .fragment(&values([("obs_dim", Observation::flat_len(2).to_string())]))
    }

    pub fn render_taskgen(&self, cfg: &TaskGenConfig) -> Result<String, TemplateError> {
        if cfg.count == 0 {
            return Err(TemplateError::MissingField {
                template: "task_gen".into(),
                field: "count".into(),
            });
        }
        let v = values([
            ("environment", self.blockworld()?),
            ("tags", tag_block(&cfg.tags)),
            ("count", cfg.count.to_string()),
            ("nonsolvable_percent", cfg.nonsolvable_percent.to_string()),
            ("examples", cfg.examples.join("\n")),
        ]);
        self.set.get("task_gen")?.render(&v)
    }

    pub fn function_list(&self) -> Result<String, TemplateError> {
        self.set.get("function_list")?.fragment(&BTreeMap::new())
    }

    /// `trajectories` are already rendered reference rollouts.
    pub fn render_instructgen(
        &self,
        task: &TaskSpec,
        function_list: &str,
        trajectories: &[String],
        examples: &[InstructionRecord],
    ) -> Result<String, TemplateError> {
        let ex: Vec<String> = examples.iter().map(render_instruction_block).collect();
        let v = values([
            ("ENVIRONMENT DESCRIPTION", self.blockworld()?),
            ("TAGS", tag_block(&default_tag_lines())),
            ("TASK", task.generator_text()),
            ("FUNCTION LIST", function_list.trim_end().to_string()),
            ("TRAJECTORY", trajectories.iter().map(|t| t.trim_end()).collect::<Vec<_>>().join("\n\n")),
            ("INSTRUCTION EXAMPLE", ex.concat().trim_end().to_string()),
        ]);
        self.set.get("instruct_gen")?.render(&v)
    }
}

pub fn render_planner_prompt(ctx: &PlannerContext) -> Result<String, TemplateError> {
    Prompts::default().render_planner(ctx)
}

pub fn render_evaluator_prompt(ctx: &EvaluatorContext) -> Result<String, TemplateError> {
    Prompts::default().render_evaluator(ctx)
}

pub fn render_taskgen_prompt(cfg: &TaskGenConfig) -> Result<String, TemplateError> {
    Prompts::default().render_taskgen(cfg)
}

pub fn render_instructgen_prompt(
    task: &TaskSpec,
    function_list: &str,
    trajectories: &[String],
    examples: &[InstructionRecord],
) -> Result<String, TemplateError> {
    Prompts::default().render_instructgen(task, function_list, trajectories, examples)
}
