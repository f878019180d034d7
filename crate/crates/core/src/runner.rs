//! Experiment orchestration: run a method over a dataset with repeats,
//! persist one trace per (task, repeat), score everything, and write a
//! reproducible report bundle (`report.json`, `report.txt`,
//! `config.snapshot`, `traces/`).
//!
//! Reports carry no timestamps or machine details, so a fixture-driven run
//! produces byte-identical `report.json` on every execution.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_iecache, RunOutcome};
use crate::baselines::{run_cot, run_generic, run_react};
use crate::config::{ConfigError, RunConfig};
use crate::datasets::{load_dataset, DatasetError, TaskInstance};
use crate::eval::{extraction_quality, percent, Aggregates, ItemMetrics, MetricReport};
use crate::gateway::{
    FixtureMode, Gateway, GatewayError, HttpBackend, ScriptedBackend, TranscriptRecord,
};
use crate::schema::{load_gold_schema, SchemaError};
use crate::trace::{
    from_jsonl, to_jsonl, validate, Method, Phase, StepRecord, TerminatedBy, TraceHeader,
    Violation,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("could not access {path}: {message}")]
    Io { path: String, message: String },
    #[error("trace {path}: {message}")]
    Trace { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Everything `report.json` holds. `mean` averages the per-repeat aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub dataset: String,
    pub n: usize,
    pub repeats: usize,
    pub per_repeat: Vec<MetricReport>,
    pub mean: Aggregates,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub report: ExperimentReport,
    pub out_dir: PathBuf,
    /// Non-fatal notes (fixture-recording dedupe conflicts and the like).
    pub warnings: Vec<String>,
}

/// Trace filename stem for a task id: anything outside `[A-Za-z0-9._-]`
/// becomes `_` so ids can never escape the traces directory.
fn safe_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || ".-_".contains(c) { c } else { '_' })
        .collect()
}

fn trace_path(out_dir: &Path, id: &str, repeat: usize) -> PathBuf {
    out_dir.join("traces").join(format!("{}.{}.jsonl", safe_stem(id), repeat))
}

fn build_gateway(config: &RunConfig) -> Result<Gateway, RunnerError> {
    let gateway = match &config.fixture {
        Some(path) => Gateway::new(ScriptedBackend::load(path)?),
        None => Gateway::new(HttpBackend::new(crate::gateway::DEFAULT_RETRY_LIMIT)?),
    };
    Ok(if config.record_fixture.is_some() { gateway.with_recording() } else { gateway })
}

fn run_one(
    method: Method,
    task: &TaskInstance,
    gateway: &Gateway,
    config: &RunConfig,
    agent_config: &crate::agent::AgentConfig,
) -> RunOutcome {
    let profile = config.profile();
    match method {
        Method::Iecache => {
            run_iecache(&task.query, &task.text, gateway, &profile, &config.prompts, agent_config)
        }
        Method::Generic => run_generic(&task.query, &task.text, gateway, &profile, &config.prompts),
        Method::Cot => run_cot(&task.query, &task.text, gateway, &profile, &config.prompts),
        Method::React => run_react(
            &task.query,
            &task.text,
            gateway,
            &profile,
            &config.prompts,
            &config.baseline_config(),
        ),
    }
}

/// Score one finished run and serialize its trace.
fn finish_job(
    task: &TaskInstance,
    method: Method,
    repeat: usize,
    config: &RunConfig,
    outcome: RunOutcome,
) -> (ItemMetrics, String) {
    let header_base = |answer: String, terminated_by: TerminatedBy, error: Option<String>| {
        TraceHeader {
            task_id: task.id.clone(),
            method,
            repeat,
            update_enabled: config.update_enabled,
            check_interval: config.check_interval,
            answer,
            terminated_by,
            error,
        }
    };
    match outcome {
        RunOutcome::Success(success) => {
            let mut item = ItemMetrics::scored(&task.id, &success.answer, &task.golds);
            if let (Some(gold), Some(cache)) = (&task.gold_table, &success.final_cache) {
                if let Some((r1, rl)) = extraction_quality(&cache.to_record_set(), gold) {
                    item.ext_rouge1_f = Some(r1);
                    item.ext_rouge_l_f = Some(rl);
                }
            }
            let header = header_base(success.answer.clone(), success.terminated_by, None);
            (item, to_jsonl(&header, &success.steps))
        }
        RunOutcome::Abort(abort) => {
            let item = ItemMetrics::failed(&task.id, abort.error.clone());
            let header = header_base(String::new(), TerminatedBy::StepLimit, Some(abort.error));
            (item, to_jsonl(&header, &abort.steps))
        }
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<ExperimentSummary, RunnerError> {
    config.validate()?;
    let instances = load_dataset(&config.dataset)?;
    if instances.is_empty() {
        return Err(RunnerError::Invalid("dataset has no tasks".to_string()));
    }
    let mut agent_config = config.agent_config();
    if let Some(path) = &config.gold_schema {
        agent_config.gold_schema = Some(load_gold_schema(path)?);
    }
    let gateway = build_gateway(config)?;
    // Queue fixtures replay responses strictly in order, so they only make
    // sense single-threaded; map fixtures and live endpoints parallelize.
    let workers = match gateway.fixture_mode() {
        Some(FixtureMode::Queue) => 1,
        _ => config.parallel_workers,
    };
    let traces_dir = config.out.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| io_error(&traces_dir, e))?;

    struct Job {
        instance: usize,
        repeat: usize,
    }
    let jobs: Vec<Job> = (1..=config.repeats)
        .flat_map(|repeat| (0..instances.len()).map(move |instance| Job { instance, repeat }))
        .collect();
    let results: Vec<Mutex<Option<Result<ItemMetrics, RunnerError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= jobs.len() {
                    break;
                }
                let job = &jobs[index];
                let task = &instances[job.instance];
                let outcome = run_one(config.method, task, &gateway, config, &agent_config);
                let (item, trace_text) =
                    finish_job(task, config.method, job.repeat, config, outcome);
                let path = trace_path(&config.out, &task.id, job.repeat);
                let stored = match fs::write(&path, trace_text) {
                    Ok(()) => Ok(item),
                    Err(e) => Err(io_error(&path, e)),
                };
                *results[index].lock().unwrap() = Some(stored);
            });
        }
    });

    let n = instances.len();
    let mut per_repeat = Vec::new();
    for repeat in 1..=config.repeats {
        let mut items = Vec::new();
        for instance in 0..n {
            let index = (repeat - 1) * n + instance;
            let slot = results[index].lock().unwrap().take();
            items.push(slot.expect("every job ran")?);
        }
        per_repeat.push(MetricReport::new(repeat, items));
    }
    let repeat_aggregates: Vec<Aggregates> =
        per_repeat.iter().map(|r| r.aggregates.clone()).collect();
    let report = ExperimentReport {
        method: config.method,
        dataset: config.dataset.display().to_string(),
        n,
        repeats: config.repeats,
        per_repeat,
        mean: Aggregates::mean_over(&repeat_aggregates),
    };

    let report_json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let json_path = config.out.join("report.json");
    fs::write(&json_path, report_json).map_err(|e| io_error(&json_path, e))?;
    let text_path = config.out.join("report.txt");
    fs::write(&text_path, render_text_report(&report)).map_err(|e| io_error(&text_path, e))?;
    let snapshot_path = config.out.join("config.snapshot");
    fs::write(&snapshot_path, config.to_snapshot()).map_err(|e| io_error(&snapshot_path, e))?;

    let mut warnings = Vec::new();
    if let Some(path) = &config.record_fixture {
        let transcript: Vec<TranscriptRecord> = gateway.transcript();
        warnings.extend(crate::gateway::write_fixture(path, &transcript)?);
    }
    Ok(ExperimentSummary { report, out_dir: config.out.clone(), warnings })
}

fn column(value: &str) -> String {
    format!("{value:>10}")
}

/// Plain-text companion to `report.json`: one row per metric, one column per
/// repeat plus the mean, percentages to two decimals.
pub fn render_text_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("method:  {}\n", report.method.label()));
    out.push_str(&format!("dataset: {}\n", report.dataset));
    out.push_str(&format!("tasks:   {}\n", report.n));
    out.push_str(&format!("repeats: {}\n\n", report.repeats));

    out.push_str(&format!("{:<14}", "metric"));
    for repeat in &report.per_repeat {
        out.push_str(&column(&format!("repeat {}", repeat.repeat)));
    }
    out.push_str(&column("mean"));
    out.push('\n');

    let rows: [(&str, fn(&Aggregates) -> Option<f64>); 5] = [
        ("em", |a| a.em),
        ("rouge1_f", |a| a.rouge1_f),
        ("rouge_l_f", |a| a.rouge_l_f),
        ("ext_rouge1_f", |a| a.ext_rouge1_f),
        ("ext_rouge_l_f", |a| a.ext_rouge_l_f),
    ];
    for (name, pick) in rows {
        out.push_str(&format!("{name:<14}"));
        for repeat in &report.per_repeat {
            out.push_str(&column(&percent(pick(&repeat.aggregates))));
        }
        out.push_str(&column(&percent(pick(&report.mean))));
        out.push('\n');
    }
    for (name, pick) in
        [("scored", (|a| a.n_scored) as fn(&Aggregates) -> usize), ("failed", |a| a.n_failed)]
    {
        out.push_str(&format!("{name:<14}"));
        for repeat in &report.per_repeat {
            out.push_str(&column(&pick(&repeat.aggregates).to_string()));
        }
        out.push_str(&column(""));
        out.push('\n');
    }
    out
}

#[derive(Debug)]
pub struct EvalOutcome {
    /// Metrics recomputed from the persisted traces and the dataset named in
    /// the config snapshot. Extraction scores are carried over from the
    /// stored report (they need the cache, which traces keep only rendered).
    pub recomputed: ExperimentReport,
    /// Differences between recomputed answer metrics and `report.json`.
    pub mismatches: Vec<String>,
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() < 1e-9,
        _ => false,
    }
}

/// Re-score an experiment directory from its traces, cross-checking the
/// stored report. The directory must contain `config.snapshot` and `traces/`.
pub fn evaluate_outputs(out_dir: &Path) -> Result<EvalOutcome, RunnerError> {
    let snapshot_path = out_dir.join("config.snapshot");
    let raw = fs::read_to_string(&snapshot_path).map_err(|e| io_error(&snapshot_path, e))?;
    let config: RunConfig = toml::from_str(&raw)
        .map_err(|e| RunnerError::Invalid(format!("config snapshot: {e}")))?;
    let instances = load_dataset(&config.dataset)?;

    let stored: Option<ExperimentReport> = fs::read_to_string(out_dir.join("report.json"))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());

    let mut per_repeat = Vec::new();
    for repeat in 1..=config.repeats {
        let mut items = Vec::new();
        for task in &instances {
            let path = trace_path(out_dir, &task.id, repeat);
            let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let (header, _steps) = from_jsonl(&text).map_err(|e| RunnerError::Trace {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let item = match header.error {
                Some(error) => ItemMetrics::failed(&task.id, error),
                None => ItemMetrics::scored(&task.id, &header.answer, &task.golds),
            };
            items.push(item);
        }
        per_repeat.push(MetricReport::new(repeat, items));
    }

    let mut mismatches = Vec::new();
    if let Some(stored) = &stored {
        for (repeat, recomputed) in per_repeat.iter_mut().enumerate() {
            let Some(stored_repeat) = stored.per_repeat.get(repeat) else {
                mismatches.push(format!("stored report lacks repeat {}", repeat + 1));
                continue;
            };
            for (item, stored_item) in recomputed.items.iter_mut().zip(&stored_repeat.items) {
                item.ext_rouge1_f = stored_item.ext_rouge1_f;
                item.ext_rouge_l_f = stored_item.ext_rouge_l_f;
                let mut diff = |field: &str, ok: bool| {
                    if !ok {
                        mismatches.push(format!(
                            "task {} repeat {}: {field} differs from stored report",
                            item.task_id,
                            repeat + 1
                        ));
                    }
                };
                diff("answer", item.answer == stored_item.answer);
                diff("em", item.em == stored_item.em);
                diff("rouge1_f", close(item.rouge1_f, stored_item.rouge1_f));
                diff("rouge_l_f", close(item.rouge_l_f, stored_item.rouge_l_f));
            }
            recomputed.aggregates = Aggregates::from_items(&recomputed.items);
        }
    }

    let repeat_aggregates: Vec<Aggregates> =
        per_repeat.iter().map(|r| r.aggregates.clone()).collect();
    let recomputed = ExperimentReport {
        method: config.method,
        dataset: config.dataset.display().to_string(),
        n: instances.len(),
        repeats: config.repeats,
        per_repeat,
        mean: Aggregates::mean_over(&repeat_aggregates),
    };
    Ok(EvalOutcome { recomputed, mismatches })
}

#[derive(Debug)]
pub struct ReplayReport {
    pub header: TraceHeader,
    /// One human-readable line per step.
    pub step_summaries: Vec<String>,
    pub violations: Vec<Violation>,
}

fn phase_label(phase: Phase) -> &'static str {
    match phase {
        Phase::Schema => "schema",
        Phase::Extract => "extract",
        Phase::Reason => "reason",
        Phase::Update => "update",
        Phase::Check => "check",
        Phase::Final => "final",
        Phase::Fallback => "fallback",
    }
}

fn summarize_step(step: &StepRecord) -> String {
    let digest = if step.cache_digest.is_empty() {
        "-".to_string()
    } else {
        step.cache_digest.chars().take(12).collect()
    };
    let action = match &step.action {
        None => String::new(),
        Some(crate::action::Action::Final { answer }) => {
            format!("  final: {}", snippet(answer))
        }
        Some(crate::action::Action::Seek { focus }) => format!("  seek: {}", snippet(focus)),
    };
    format!(
        "step {:>3}  {:<8}  rows {:>3}  digest {digest}{action}",
        step.step,
        phase_label(step.phase),
        step.cache_size
    )
}

fn snippet(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= 48 {
        flat
    } else {
        let head: String = flat.chars().take(48).collect();
        format!("{head}…")
    }
}

/// Parse a persisted trace and re-check every invariant the validator knows:
/// phase grammar, digest/rendering agreement, frozen digests for runs with
/// updates disabled.
pub fn replay_trace(path: &Path) -> Result<ReplayReport, RunnerError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let (header, steps) = from_jsonl(&text).map_err(|e| RunnerError::Trace {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let violations = validate(&header, &steps);
    let step_summaries = steps.iter().map(summarize_step).collect();
    Ok(ReplayReport { header, step_summaries, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{write_dataset, Family};
    use crate::eval::GoldTable;

    fn task(id: &str, gold: &str) -> TaskInstance {
        TaskInstance {
            id: id.to_string(),
            family: Family::Qa,
            query: format!("what is {id}?"),
            text: "A long enough text about the subject at hand.".to_string(),
            golds: vec![gold.to_string()],
            gold_schema: None,
            gold_table: None,
        }
    }

    fn queue_fixture(path: &Path, contents: &[&str]) {
        let mut text = String::from("{\"mode\":\"queue\"}\n");
        for content in contents {
            text.push_str(&serde_json::to_string(&serde_json::json!({ "content": content })).unwrap());
            text.push('\n');
        }
        fs::write(path, text).unwrap();
    }

    fn base_config(dir: &Path, out_name: &str) -> RunConfig {
        let mut config = RunConfig::default();
        config.dataset = dir.join("tasks.jsonl");
        config.out = dir.join(out_name);
        config.method = Method::Generic;
        config
    }

    #[test]
    fn generic_experiment_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris"), task("t2", "Lyon")])
            .unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(&fixture, &["Paris", "Marseille"]);
        let mut config = base_config(dir.path(), "out");
        config.fixture = Some(fixture);
        let summary = run_experiment(&config).unwrap();

        assert_eq!(summary.report.n, 2);
        assert_eq!(summary.report.per_repeat.len(), 1);
        let items = &summary.report.per_repeat[0].items;
        assert_eq!(items[0].answer.as_deref(), Some("Paris"));
        assert_eq!(items[0].em, Some(1));
        assert_eq!(items[1].em, Some(0));
        assert!((summary.report.mean.em.unwrap() - 0.5).abs() < 1e-12);

        // The bundle is complete and the traces replay cleanly.
        for name in ["report.json", "report.txt", "config.snapshot"] {
            assert!(config.out.join(name).exists(), "{name} missing");
        }
        for id in ["t1", "t2"] {
            let replay = replay_trace(&trace_path(&config.out, id, 1)).unwrap();
            assert!(replay.violations.is_empty(), "{:?}", replay.violations);
            assert_eq!(replay.step_summaries.len(), 1);
        }
    }

    #[test]
    fn fixture_runs_reproduce_report_json_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris")]).unwrap();
        let mut bytes = Vec::new();
        for out_name in ["out1", "out2"] {
            let fixture = dir.path().join(format!("{out_name}.fixture.jsonl"));
            queue_fixture(&fixture, &["Paris"]);
            let mut config = base_config(dir.path(), out_name);
            config.fixture = Some(fixture);
            run_experiment(&config).unwrap();
            bytes.push(fs::read(config.out.join("report.json")).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn exhausted_fixture_nulls_the_item_but_finishes_the_experiment() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris"), task("t2", "Lyon")])
            .unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(&fixture, &["Paris"]); // one response for two tasks
        let mut config = base_config(dir.path(), "out");
        config.fixture = Some(fixture);
        config.parallel_workers = 4; // clamped to 1 by the queue fixture
        let summary = run_experiment(&config).unwrap();

        let items = &summary.report.per_repeat[0].items;
        assert_eq!(items[0].em, Some(1));
        assert!(items[1].error.as_deref().unwrap().contains("no response"));
        assert_eq!(items[1].em, None);
        assert_eq!(summary.report.per_repeat[0].aggregates.n_failed, 1);
        // Aggregate mean covers the scored item only.
        assert!((summary.report.mean.em.unwrap() - 1.0).abs() < 1e-12);
        // The aborted run still left a (header-only) trace.
        let replay = replay_trace(&trace_path(&config.out, "t2", 1)).unwrap();
        assert!(replay.header.error.is_some());
    }

    #[test]
    fn recording_a_run_writes_a_loadable_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris"), task("t2", "Lyon")])
            .unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(&fixture, &["Paris", "Lyon"]);
        let recorded = dir.path().join("recorded.jsonl");
        let mut config = base_config(dir.path(), "out");
        config.fixture = Some(fixture);
        config.record_fixture = Some(recorded.clone());
        let summary = run_experiment(&config).unwrap();
        assert!(summary.warnings.is_empty(), "{:?}", summary.warnings);

        let backend = ScriptedBackend::load(&recorded).unwrap();
        assert_eq!(backend.mode(), FixtureMode::Map);
        // Replaying against the recorded fixture reproduces the report.
        let mut config2 = base_config(dir.path(), "out2");
        config2.fixture = Some(recorded);
        let replayed = run_experiment(&config2).unwrap();
        assert_eq!(replayed.report.per_repeat, summary.report.per_repeat);
    }

    #[test]
    fn repeats_produce_separate_traces_and_mean_over_repeats() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris")]).unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(&fixture, &["Paris", "Nice"]); // repeat 1 right, repeat 2 wrong
        let mut config = base_config(dir.path(), "out");
        config.fixture = Some(fixture);
        config.repeats = 2;
        let summary = run_experiment(&config).unwrap();
        assert!(trace_path(&config.out, "t1", 1).exists());
        assert!(trace_path(&config.out, "t1", 2).exists());
        assert!((summary.report.mean.em.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evaluate_recomputes_and_cross_checks() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("tasks.jsonl"), &[task("t1", "Paris"), task("t2", "Lyon")])
            .unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(&fixture, &["Paris", "Marseille"]);
        let mut config = base_config(dir.path(), "out");
        config.fixture = Some(fixture);
        let summary = run_experiment(&config).unwrap();

        let eval = evaluate_outputs(&config.out).unwrap();
        assert!(eval.mismatches.is_empty(), "{:?}", eval.mismatches);
        assert_eq!(eval.recomputed.per_repeat, summary.report.per_repeat);

        // Tamper with the stored report: the cross-check must notice.
        let report_path = config.out.join("report.json");
        let tampered = fs::read_to_string(&report_path)
            .unwrap()
            .replacen("\"em\": 1", "\"em\": 0", 1);
        fs::write(&report_path, tampered).unwrap();
        let eval = evaluate_outputs(&config.out).unwrap();
        assert!(eval.mismatches.iter().any(|m| m.contains("em")), "{:?}", eval.mismatches);
    }

    #[test]
    fn text_report_lists_every_metric_row() {
        let items = vec![ItemMetrics::scored("t1", "x", &["x".to_string()])];
        let report = ExperimentReport {
            method: Method::Cot,
            dataset: "tasks.jsonl".to_string(),
            n: 1,
            repeats: 1,
            per_repeat: vec![MetricReport::new(1, items)],
            mean: Aggregates::from_items(&[ItemMetrics::scored("t1", "x", &["x".to_string()])]),
        };
        let text = render_text_report(&report);
        for needle in ["method:  cot", "em", "rouge1_f", "rouge_l_f", "scored", "100.00"] {
            assert!(text.contains(needle), "missing {needle} in:\n{text}");
        }
    }

    #[test]
    fn extraction_scores_flow_into_the_report_for_cache_runs() {
        // A full cache-loop fixture: schema, extract, then an immediate final.
        let dir = tempfile::tempdir().unwrap();
        let mut instance = task("t1", "9am");
        instance.gold_table = Some(GoldTable {
            slots: vec!["speaker".to_string(), "time".to_string()],
            rows: vec![vec![
                crate::record::CellValue::Text("Ann".to_string()),
                crate::record::CellValue::Text("9am".to_string()),
            ]],
        });
        write_dataset(&dir.path().join("tasks.jsonl"), &[instance]).unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        queue_fixture(
            &fixture,
            &[
                r#"[{"name":"speaker","description":"who","kind":"text"},{"name":"time","description":"when","kind":"text"}]"#,
                r#"[{"speaker":"Ann","time":"9am"}]"#,
                "The cache answers the query. <final>9am</final>",
            ],
        );
        let mut config = base_config(dir.path(), "out");
        config.method = Method::Iecache;
        config.fixture = Some(fixture);
        let summary = run_experiment(&config).unwrap();
        let item = &summary.report.per_repeat[0].items[0];
        assert_eq!(item.em, Some(1));
        let ext = item.ext_rouge1_f.expect("extraction scored against the gold table");
        assert!((ext - 1.0).abs() < 1e-9, "{ext}");
        assert!(summary.report.mean.ext_rouge_l_f.is_some());
        // And the persisted iecache trace validates.
        let replay = replay_trace(&trace_path(&config.out, "t1", 1)).unwrap();
        assert!(replay.violations.is_empty(), "{:?}", replay.violations);
    }
}
