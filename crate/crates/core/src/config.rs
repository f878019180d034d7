//! Experiment configuration: a flat TOML file mirroring every run knob, plus
//! an optional `[prompts]` table overriding individual prompt templates.
//!
//! Relative paths in a config file resolve against the file's own directory,
//! so a config behaves the same from any working directory. CLI flags
//! override file values (applied by the binary, then re-validated).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::baselines::BaselineConfig;
use crate::chunk::ChunkingOptions;
use crate::extract::ExtractOptions;
use crate::gateway::ModelProfile;
use crate::prompts::PromptSet;
use crate::trace::Method;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse failed: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Experiment shape.
    pub dataset: PathBuf,
    pub method: Method,
    pub repeats: usize,
    pub parallel_workers: usize,
    pub out: PathBuf,
    /// Scripted responses instead of a live endpoint.
    pub fixture: Option<PathBuf>,
    /// Write every live exchange to a replayable fixture.
    pub record_fixture: Option<PathBuf>,

    // Model profile.
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Base URL; the IECACHE_API_BASE environment variable overrides it.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub auth_source: String,

    // Cache-loop knobs.
    pub max_steps: usize,
    pub update_enabled: bool,
    pub check_interval: usize,
    pub repair_retries: usize,
    pub monolithic: bool,
    /// Curated schema file; skips induction when set.
    pub gold_schema: Option<PathBuf>,
    pub cache_capacity: usize,

    // Extraction knobs.
    pub token_budget: usize,
    pub token_overlap: usize,
    pub max_rows: usize,
    pub parallel_chunks: usize,
    pub allow_extra_slots: usize,
    pub max_slots: usize,

    // Baseline knobs.
    pub react_max_steps: usize,
    pub react_window_tokens: usize,

    /// Prompt template overrides; unset entries keep the built-in text.
    pub prompts: PromptSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        let extract = ExtractOptions::default();
        let baseline = BaselineConfig::default();
        let profile = ModelProfile::default();
        RunConfig {
            dataset: PathBuf::new(),
            method: Method::Iecache,
            repeats: 1,
            parallel_workers: 4,
            out: PathBuf::from("out"),
            fixture: None,
            record_fixture: None,
            model: profile.name,
            temperature: profile.temperature,
            max_output_tokens: profile.max_output_tokens,
            endpoint: None,
            auth_source: profile.auth_source,
            max_steps: agent.max_steps,
            update_enabled: agent.update_enabled,
            check_interval: agent.check_interval,
            repair_retries: agent.repair_retries,
            monolithic: agent.monolithic,
            gold_schema: None,
            cache_capacity: agent.capacity,
            token_budget: extract.chunking.token_budget,
            token_overlap: extract.chunking.token_overlap,
            max_rows: extract.max_rows,
            parallel_chunks: extract.parallel_chunks,
            allow_extra_slots: extract.allow_extra_slots,
            max_slots: extract.max_slots,
            react_max_steps: baseline.react_max_steps,
            react_window_tokens: baseline.react_window_tokens,
            prompts: PromptSet::default(),
        }
    }
}

impl RunConfig {
    /// Load, resolve paths against the file's directory, and validate.
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config: RunConfig =
            toml::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.dataset);
        resolve(&mut self.out);
        if let Some(p) = &mut self.fixture {
            resolve(p);
        }
        if let Some(p) = &mut self.record_fixture {
            resolve(p);
        }
        if let Some(p) = &mut self.gold_schema {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.dataset.as_os_str().is_empty() {
            return fail("dataset path is required");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        if self.parallel_workers == 0 {
            return fail("parallel_workers must be at least 1");
        }
        if self.fixture.is_some() && self.endpoint.is_some() {
            return fail("fixture and endpoint are mutually exclusive; pick one");
        }
        if self.monolithic && self.gold_schema.is_some() {
            return fail("monolithic induction and a supplied gold schema are mutually exclusive");
        }
        if self.token_overlap >= self.token_budget {
            return fail("token_overlap must be smaller than token_budget");
        }
        if self.max_steps == 0 || self.react_max_steps == 0 {
            return fail("step limits must be at least 1");
        }
        if self.cache_capacity == 0 {
            return fail("cache_capacity must be at least 1");
        }
        if self.max_slots == 0 {
            return fail("max_slots must be at least 1");
        }
        Ok(())
    }

    pub fn profile(&self) -> ModelProfile {
        ModelProfile {
            name: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            endpoint: self.endpoint.clone(),
            auth_source: self.auth_source.clone(),
        }
    }

    /// Agent knobs minus the gold schema, which the runner loads from
    /// `gold_schema` separately (it needs file access and error context).
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_steps: self.max_steps,
            update_enabled: self.update_enabled,
            check_interval: self.check_interval,
            repair_retries: self.repair_retries,
            monolithic: self.monolithic,
            gold_schema: None,
            extract: ExtractOptions {
                chunking: ChunkingOptions {
                    token_budget: self.token_budget,
                    token_overlap: self.token_overlap,
                },
                max_rows: self.max_rows,
                parallel_chunks: self.parallel_chunks,
                allow_extra_slots: self.allow_extra_slots,
                repair_retries: self.repair_retries,
                max_slots: self.max_slots,
            },
            capacity: self.cache_capacity,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            react_max_steps: self.react_max_steps,
            react_window_tokens: self.react_window_tokens,
            repair_retries: self.repair_retries,
        }
    }

    /// Serialized form persisted next to every report for reproducibility.
    pub fn to_snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
