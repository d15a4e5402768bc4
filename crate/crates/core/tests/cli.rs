use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qvote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvote"))
        .args(args)
        .env("QVOTE_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn example(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(config: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    qvote(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_honest_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&example("honest3.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = report(dir.path());
    assert_eq!(report["tally"], 2);
    assert_eq!(report["aborted"], Value::Null);
    assert!(dir.path().join("trace.jsonl").exists());
    assert!(dir.path().join("chain.jsonl").exists());
}

#[test]
fn seed_override_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&example("honest3.json"), dir.path(), &["--seed", "43"]);
    assert_eq!(out.status.code(), Some(0));
    let report = report(dir.path());
    assert_eq!(report["seed"], 43);
    assert_eq!(report["tally"], 2);
}

#[test]
fn withheld_opening_exits_2_naming_culprit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&example("withhold.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let report = report(dir.path());
    assert_eq!(report["tally"], Value::Null);
    assert_eq!(report["aborted"]["reason"], "withheld_opening");
    assert_eq!(report["aborted"]["culprits"], serde_json::json!(["V2"]));
    assert!(stdout(&out).contains("V2"));
}

#[test]
fn bad_configs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let malformed = dir.path().join("bad.json");
    std::fs::write(&malformed, "{\"n_voters\": 3, \"votes\": [1,0]").unwrap();
    let out = run_into(malformed.to_str().unwrap(), &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error"));

    let invalid = dir.path().join("invalid.json");
    std::fs::write(
        &invalid,
        r#"{"n_voters":3,"votes":[1,0],"m_miners":3,"seed":1}"#,
    )
    .unwrap();
    let out = run_into(invalid.to_str().unwrap(), &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = run_into("/nonexistent/config.json", &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(qvote(&["run", "--config"]).status.code(), Some(1));
    assert_eq!(qvote(&["launch"]).status.code(), Some(1));
    assert_eq!(qvote(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_fresh_and_corrupted_traces() {
    let dir = tempfile::tempdir().unwrap();
    run_into(&example("honest3.json"), dir.path(), &[]);
    let trace_path = dir.path().join("trace.jsonl");
    let out = qvote(&["verify", trace_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("tally 2"));

    let text = std::fs::read_to_string(&trace_path).unwrap();

    // One hex digit changed in the digest of line 5.
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let at = lines[4].find("\"digest\":\"").unwrap() + 10;
    let old = lines[4].as_bytes()[at];
    let new = if old == b'0' { '1' } else { '0' };
    lines[4].replace_range(at..at + 1, &new.to_string());
    let flipped = dir.path().join("flipped.jsonl");
    std::fs::write(&flipped, lines.join("\n") + "\n").unwrap();
    let out = qvote(&["verify", flipped.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));

    // Two block lines swapped.
    let mut lines: Vec<&str> = text.lines().collect();
    let blocks: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.contains("\"type\":\"block\""))
        .map(|(i, _)| i)
        .collect();
    lines.swap(blocks[1], blocks[2]);
    let reordered = dir.path().join("reordered.jsonl");
    std::fs::write(&reordered, lines.join("\n") + "\n").unwrap();
    let out = qvote(&["verify", reordered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let out = qvote(&["verify", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn attack_tables() {
    let out = qvote(&[
        "attack",
        "--config",
        &example("honest3.json"),
        "--type",
        "double-vote",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("non-reusability"));
    assert!(text.contains("pass"));
    assert!(text.contains("duplicate_ballot"));

    let out = qvote(&[
        "attack",
        "--config",
        &example("rebind_blind.json"),
        "--type",
        "rebind",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("not guaranteed"));

    let out = qvote(&[
        "attack",
        "--config",
        &example("honest3.json"),
        "--type",
        "withhold",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("withhold-abort"));

    let out = qvote(&[
        "attack",
        "--config",
        &example("honest3.json"),
        "--type",
        "gremlin",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn attack_all_on_honest_three_voters() {
    let out = qvote(&[
        "attack",
        "--config",
        &example("honest3.json"),
        "--type",
        "all",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    for property in [
        "anonymity",
        "binding",
        "non-reusability",
        "verifiability",
        "eligibility",
        "fairness",
        "self-tallying",
    ] {
        let row = text
            .lines()
            .find(|l| l.starts_with(property))
            .unwrap_or_else(|| panic!("no {property} row in\n{text}"));
        assert!(row.contains(" pass "), "{row}");
    }
    assert!(text.contains("7/7 pass"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into(&example("tamper.json"), a.path(), &[]);
    run_into(&example("tamper.json"), b.path(), &[]);
    for f in ["report.json", "trace.jsonl", "chain.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
