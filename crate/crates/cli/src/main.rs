//! Command-line front end: run experiments, re-score finished output
//! directories, validate traces, and convert public releases into the
//! canonical task format.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use iecache_core::config::RunConfig;
use iecache_core::datasets::{adapt, SourceFormat};
use iecache_core::eval::percent;
use iecache_core::runner::{
    evaluate_outputs, render_text_report, replay_trace, run_experiment,
};
use iecache_core::trace::Method;

#[derive(Parser)]
#[command(
    name = "iecache",
    version,
    about = "Cache-based reasoning over long texts: experiments, scoring, trace replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run(RunArgs),
    /// Re-score a finished experiment directory and cross-check its report.
    Eval(EvalArgs),
    /// Validate a persisted trace file and print a step summary.
    Replay(ReplayArgs),
    /// Convert a public release file into the canonical task format.
    Adapt(AdaptArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; flags below override its values.
    #[arg(long)]
    config: PathBuf,
    /// Method to run: iecache, generic, cot, or react.
    #[arg(long)]
    method: Option<Method>,
    /// Dataset file (canonical JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Reasoning step limit before the fallback answer.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Freeze the cache after initialization (no update or check calls).
    #[arg(long)]
    no_update: bool,
    /// Curated schema file; skips schema induction.
    #[arg(long)]
    gold_schema: Option<PathBuf>,
    /// Induce the schema and rows in one un-chunked call.
    #[arg(long)]
    monolithic: bool,
    /// How many times to run the whole task set.
    #[arg(long)]
    repeats: Option<usize>,
    /// Scripted responses instead of a live endpoint.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Record every model exchange to a replayable fixture.
    #[arg(long)]
    record_fixture: Option<PathBuf>,
    /// Output directory for traces and reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment output directory (holds config.snapshot and traces/).
    #[arg(long)]
    pred: PathBuf,
    /// Print just one aggregate instead of the full table.
    #[arg(long, value_enum)]
    metric: Option<MetricChoice>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricChoice {
    Em,
    Rouge1,
    #[value(name = "rougeL")]
    RougeL,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file written by `run` (traces/<id>.<repeat>.jsonl).
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    /// Source layout: tact, calendar, or qmsum.
    #[arg(long = "from")]
    from: SourceFormat,
    /// Raw release file (JSON Lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Canonical JSONL to write.
    #[arg(long = "out")]
    output: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Adapt(args) => cmd_adapt(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut config = RunConfig::from_file(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(method) = args.method {
        config.method = method;
    }
    if let Some(dataset) = args.dataset {
        config.dataset = dataset;
    }
    if let Some(max_steps) = args.max_steps {
        config.max_steps = max_steps;
    }
    if args.no_update {
        config.update_enabled = false;
    }
    if let Some(gold_schema) = args.gold_schema {
        config.gold_schema = Some(gold_schema);
    }
    if args.monolithic {
        config.monolithic = true;
    }
    if let Some(repeats) = args.repeats {
        config.repeats = repeats;
    }
    if let Some(fixture) = args.fixture {
        config.fixture = Some(fixture);
    }
    if let Some(record_fixture) = args.record_fixture {
        config.record_fixture = Some(record_fixture);
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    config.validate()?;

    let summary = run_experiment(&config)?;
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", render_text_report(&summary.report));
    println!("\nreport written to {}", summary.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let outcome = evaluate_outputs(&args.pred)
        .with_context(|| format!("evaluating {}", args.pred.display()))?;
    match args.metric {
        None => print!("{}", render_text_report(&outcome.recomputed)),
        Some(choice) => {
            let mean = &outcome.recomputed.mean;
            let (name, value) = match choice {
                MetricChoice::Em => ("em", mean.em),
                MetricChoice::Rouge1 => ("rouge1", mean.rouge1_f),
                MetricChoice::RougeL => ("rougeL", mean.rouge_l_f),
            };
            println!("{name}: {}", percent(value));
        }
    }
    if outcome.mismatches.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for mismatch in &outcome.mismatches {
            eprintln!("mismatch: {mismatch}");
        }
        eprintln!("stored report.json disagrees with recomputation");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode> {
    let report = replay_trace(&args.trace)
        .with_context(|| format!("replaying {}", args.trace.display()))?;
    let header = &report.header;
    println!(
        "task {}  method {}  repeat {}  update_enabled {}  terminated_by {:?}",
        header.task_id,
        header.method.label(),
        header.repeat,
        header.update_enabled,
        header.terminated_by
    );
    if let Some(error) = &header.error {
        println!("aborted: {error}");
    }
    for line in &report.step_summaries {
        println!("{line}");
    }
    if report.violations.is_empty() {
        println!("verdict: OK");
        Ok(ExitCode::SUCCESS)
    } else {
        for violation in &report.violations {
            println!("violation: {violation}");
        }
        println!("verdict: INVALID");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_adapt(args: AdaptArgs) -> Result<ExitCode> {
    let count = adapt(args.from, &args.input, &args.output)
        .with_context(|| format!("adapting {}", args.input.display()))?;
    println!("wrote {count} task(s) to {}", args.output.display());
    Ok(ExitCode::SUCCESS)
}
