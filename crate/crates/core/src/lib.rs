//! Tabletop planning under partial observability: simulator, belief
//! tracking, prompt protocol, language-model backends, planner loop,
//! self-instruct data generation and evaluation harness.

pub mod agent;
pub mod backends;
pub mod belief;
pub mod fixtures;
pub mod goals;
pub mod harness;
pub mod prompts;
pub mod selfinstruct;
pub mod protocol;
pub mod sim;
pub mod task;
