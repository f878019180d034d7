//! End-to-end checks of the binary surface — run, eval, replay, adapt —
//! driven over the bundled offline demo fixture, with absolute paths so the
//! tests do not care about the working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("crate lives two levels under the repository root")
        .to_path_buf()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iecache"))
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

/// Replay the demo fixture into `out`, panicking on a nonzero exit.
fn run_demo(out: &Path) -> Output {
    let output = bin()
        .arg("run")
        .arg("--config")
        .arg(repo_root().join("configs").join("demo_fixture.toml"))
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary launches");
    assert!(
        output.status.success(),
        "demo run failed:\n{}\n{}",
        stdout_of(&output),
        stderr_of(&output)
    );
    output
}

#[test]
fn run_replays_the_demo_and_writes_reports() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("demo");
    let output = run_demo(&out);
    let text = stdout_of(&output);
    assert!(text.contains("method:  iecache"), "{text}");
    assert!(text.contains("em"), "{text}");
    assert!(text.contains("75.00"), "{text}");
    assert!(text.contains("report written to"), "{text}");

    for artifact in ["report.json", "report.txt", "config.snapshot"] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).expect("report"))
            .expect("report.json parses");
    assert_eq!(report["n"], 12);
    assert_eq!(report["mean"]["em"], 0.75);
    let traces = fs::read_dir(out.join("traces")).expect("traces dir").count();
    assert_eq!(traces, 12, "one trace per task");
}

#[test]
fn eval_cross_checks_the_stored_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("demo");
    run_demo(&out);

    let clean = bin().arg("eval").arg("--pred").arg(&out).output().expect("binary launches");
    assert!(clean.status.success(), "{}", stderr_of(&clean));
    assert!(stdout_of(&clean).contains("75.00"), "{}", stdout_of(&clean));

    let single = bin()
        .args(["eval", "--metric", "em", "--pred"])
        .arg(&out)
        .output()
        .expect("binary launches");
    assert!(single.status.success());
    assert_eq!(stdout_of(&single).trim(), "em: 75.00");

    // Flip one per-task em in the stored report; eval must exit nonzero and
    // say which task disagrees.
    let report_path = out.join("report.json");
    let tampered = fs::read_to_string(&report_path)
        .expect("report")
        .replacen("\"em\": 1", "\"em\": 0", 1);
    fs::write(&report_path, tampered).expect("write tampered report");
    let caught = bin().arg("eval").arg("--pred").arg(&out).output().expect("binary launches");
    assert!(!caught.status.success(), "tampered report must fail the cross-check");
    let complaints = stderr_of(&caught);
    assert!(complaints.contains("mismatch"), "{complaints}");
    assert!(complaints.contains("em"), "{complaints}");
}

#[test]
fn replay_accepts_real_traces_and_rejects_tampered_ones() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("demo");
    run_demo(&out);
    let trace = out.join("traces").join("syn-qa-01.1.jsonl");

    let ok = bin().arg("replay").arg("--trace").arg(&trace).output().expect("binary launches");
    assert!(ok.status.success(), "{}", stderr_of(&ok));
    let text = stdout_of(&ok);
    assert!(text.contains("task syn-qa-01"), "{text}");
    assert!(text.contains("verdict: OK"), "{text}");

    // Rewrite the header answer only; the final step record now disagrees.
    let original = fs::read_to_string(&trace).expect("trace");
    let mut lines: Vec<&str> = original.lines().collect();
    let tampered_header = lines[0].replace("Harlow Bridge", "Keller Bridge");
    lines[0] = &tampered_header;
    let tampered_path = dir.path().join("tampered.jsonl");
    fs::write(&tampered_path, lines.join("\n") + "\n").expect("write tampered trace");

    let caught =
        bin().arg("replay").arg("--trace").arg(&tampered_path).output().expect("binary launches");
    assert!(!caught.status.success(), "tampered trace must be rejected");
    let text = stdout_of(&caught);
    assert!(text.contains("violation"), "{text}");
    assert!(text.contains("verdict: INVALID"), "{text}");
}

#[test]
fn adapt_converts_a_release_file_into_canonical_tasks() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("tact.jsonl");
    let output_path = dir.path().join("converted.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"question":"total sales?","context":"The ledger lists north at 30 and south at 12.","answer":"42"}"#,
            "\n",
            r#"{"id":"t-two","question":"who won?","context":"Results came in.","answers":["Ann","Ann Lee"]}"#,
            "\n",
        ),
    )
    .expect("write source");

    let output = bin()
        .args(["adapt", "--from", "tact"])
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&output_path)
        .output()
        .expect("binary launches");
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("wrote 2 task(s)"), "{}", stdout_of(&output));

    let converted = fs::read_to_string(&output_path).expect("converted file");
    let tasks: Vec<serde_json::Value> = converted
        .lines()
        .map(|line| serde_json::from_str(line).expect("canonical line parses"))
        .collect();
    assert_eq!(tasks.len(), 2);
    assert_eq!(tasks[0]["id"], "tact-0001");
    assert_eq!(tasks[0]["family"], "qa");
    assert_eq!(tasks[1]["id"], "t-two");
    assert_eq!(tasks[1]["golds"], serde_json::json!(["Ann", "Ann Lee"]));
}

#[test]
fn an_invalid_config_is_refused_with_context() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        concat!(
            "dataset = \"tasks.jsonl\"\n",
            "fixture = \"replies.jsonl\"\n",
            "endpoint = \"http://localhost/v1\"\n",
        ),
    )
    .expect("write config");

    let output =
        bin().arg("run").arg("--config").arg(&config).output().expect("binary launches");
    assert!(!output.status.success(), "conflicting config must be refused");
    let complaints = stderr_of(&output);
    assert!(complaints.contains("error"), "{complaints}");
    assert!(complaints.contains("mutually exclusive"), "{complaints}");
}
