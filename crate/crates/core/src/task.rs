//! Task descriptions shared by the simulator, prompts, and evaluation harness.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Hidden-parameter assumption attached to a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    /// Cube masses are randomized.
    Mass,
    /// Cubes are randomly fixed to the table (at least one movable).
    Fix,
    /// Three cubes instead of two.
    Three,
}

impl Tag {
    /// Parse a tag name as it appears between angle brackets in task text.
    pub fn from_marker(name: &str) -> Option<Tag> {
        match name.trim().to_ascii_lowercase().as_str() {
            "weight" | "mass" => Some(Tag::Mass),
            "move" | "movable" | "fix" | "fixed" => Some(Tag::Fix),
            "three" => Some(Tag::Three),
            _ => None,
        }
    }

    /// Marker used in planner and evaluator prompts.
    pub fn prompt_marker(self) -> &'static str {
        match self {
            Tag::Mass => "<mass>",
            Tag::Fix => "<movable>",
            Tag::Three => "<three>",
        }
    }

    /// Marker used by the task and instruction generation prompts.
    pub fn generator_marker(self) -> &'static str {
        match self {
            Tag::Mass => "<weight>",
            Tag::Fix => "<move>",
            Tag::Three => "<three>",
        }
    }

    pub fn is_uncertainty(self) -> bool {
        matches!(self, Tag::Mass | Tag::Fix)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Tag::Mass => "mass",
            Tag::Fix => "fix",
            Tag::Three => "three",
        };
        f.write_str(name)
    }
}

/// Goal configuration a runnable task must reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSchema {
    /// Any cube stacked on any other cube.
    StackAny,
    /// Every cube near a distinct table corner.
    BlocksToCorners,
    /// The heavier cube is held at episode end.
    HoldHeavier,
    /// The lighter cube stacked on the heavier cube.
    StackLighterOnHeavier,
    /// A movable cube near a table corner.
    MovableToCorner,
    /// The movable cube stacked on the fixed cube.
    MovableOnFixed,
}

impl GoalSchema {
    /// Whether the scene must contain both a fixed and a movable cube for
    /// the goal to be well defined.
    pub fn requires_single_movable(self) -> bool {
        matches!(self, GoalSchema::MovableToCorner | GoalSchema::MovableOnFixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub tags: BTreeSet<Tag>,
    pub description: String,
    #[serde(default)]
    pub exploration_needed: bool,
    #[serde(default)]
    pub goal_schema: Option<GoalSchema>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, tags: impl IntoIterator<Item = Tag>, description: impl Into<String>) -> Self {
        TaskSpec {
            id: id.into(),
            tags: tags.into_iter().collect(),
            description: description.into(),
            exploration_needed: false,
            goal_schema: None,
        }
    }

    pub fn with_goal(mut self, goal: GoalSchema) -> Self {
        self.goal_schema = Some(goal);
        self
    }

    /// Marks the task as needing exploration (the trailing `*`).
    pub fn with_exploration(mut self) -> Self {
        self.exploration_needed = true;
        self
    }

    pub fn has(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn cube_count(&self) -> usize {
        if self.has(Tag::Three) {
            3
        } else {
            2
        }
    }

    pub fn has_uncertainty(&self) -> bool {
        self.tags.iter().any(|t| t.is_uncertainty())
    }

    pub fn is_runnable(&self) -> bool {
        self.goal_schema.is_some()
    }

    /// Task text as shown to the planner and evaluator, e.g.
    /// `<mass> Stack the lighter block on the heavier.`
    pub fn prompt_text(&self) -> String {
        let mut out = String::new();
        for tag in &self.tags {
            out.push_str(tag.prompt_marker());
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&self.description);
        out
    }

    /// Task text in the generator dialect, e.g. `<weight> Pick up the heavier block*`.
    pub fn generator_text(&self) -> String {
        let mut out = String::new();
        for tag in &self.tags {
            out.push_str(tag.generator_marker());
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&self.description);
        if self.exploration_needed {
            out.push('*');
        }
        out
    }
}

/// Cube identifiers in declaration order: `cubeA`, `cubeB`, ...
pub fn cube_ids(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| format!("cube{}", (b'A' + i as u8) as char))
        .collect()
}

/// Split leading `<tag>` markers off a task string. Returns the tags, the
/// remaining description, and any marker names that were not recognized.
pub fn split_tag_prefix(text: &str) -> (BTreeSet<Tag>, String, Vec<String>) {
    let mut tags = BTreeSet::new();
    let mut unknown = Vec::new();
    let mut rest = text.trim_start();
    while let Some(stripped) = rest.strip_prefix('<') {
        let Some(end) = stripped.find('>') else { break };
        let name = &stripped[..end];
        match Tag::from_marker(name) {
            Some(tag) => {
                tags.insert(tag);
            }
            None => unknown.push(name.to_string()),
        }
        rest = stripped[end + 1..].trim_start();
    }
    (tags, rest.trim().to_string(), unknown)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_split_handles_combined_tags() {
        let (tags, desc, unknown) = split_tag_prefix("<three><weight> Sort all the blocks by their weight*");
        assert_eq!(tags, [Tag::Mass, Tag::Three].into_iter().collect());
        assert_eq!(desc, "Sort all the blocks by their weight*");
        assert!(unknown.is_empty());
    }

    #[test]
    fn prompt_text_uses_prompt_markers() {
        let t = TaskSpec::new("4", [Tag::Mass], "Stack the lighter block on the heavier.");
        assert_eq!(t.prompt_text(), "<mass> Stack the lighter block on the heavier.");
        let t = TaskSpec::new("1", [], "Stack one block onto another.");
        assert_eq!(t.prompt_text(), "Stack one block onto another.");
    }

    #[test]
    fn ids_follow_letters() {
        assert_eq!(cube_ids(3), vec!["cubeA", "cubeB", "cubeC"]);
    }
}
