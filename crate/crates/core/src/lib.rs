//! Long-context question answering by maintaining a compact, structured cache
//! of extracted records instead of repeatedly re-reading the raw document.
//!
//! The pipeline: induce a query-conditioned table schema, extract matching
//! records from the document, then run a reasoning loop that can request more
//! evidence (`<seek>`), fold it into the cache, and answer (`<final>`). The
//! crate also ships prompt-only baselines (generic, chain-of-thought, ReAct),
//! deterministic scripted-model replay for tests, dataset adapters, answer
//! metrics, and an experiment runner that writes traces and reports.

pub mod action;
pub mod agent;
pub mod baselines;
pub mod cache;
pub mod chunk;
pub mod config;
pub mod datasets;
pub mod eval;
pub mod extract;
pub mod gateway;
pub mod prompts;
pub mod record;
pub mod runner;
pub mod schema;
pub mod trace;

pub use action::Action;
pub use agent::{AgentConfig, RunOutcome};
pub use cache::Cache;
pub use config::RunConfig;
pub use gateway::{Gateway, Message, ModelProfile, Role};
pub use record::{CellValue, RecordRow, RecordSet};
pub use schema::{ExtractionSchema, SchemaSlot, ValueKind};
pub use trace::{Method, Phase, RunTrace, StepRecord};
