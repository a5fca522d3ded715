mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::read_tree;

fn affordance(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affordance"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_then_stepwise_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let msg = ok(affordance(&["synth", "--output", "ws", "--seed", "42"], d));
    assert!(msg.contains("300 objects"));
    for f in ["detections.jsonl", "ground_truth.json", "labels.json", "knowledge_graph.json", "spatial_rule.json", "config.json"] {
        assert!(d.join("ws").join(f).is_file(), "{f}");
    }

    let report: serde_json::Value = serde_json::from_str(&ok(affordance(&["run", "--config", "ws/config.json"], d))).unwrap();
    assert!(report["map_score"].as_f64().unwrap() >= 0.9);

    for cmd in ["ingest", "project", "relabel", "verify", "evaluate"] {
        ok(affordance(&[cmd, "--config", "ws/config.json", "--output", "steps"], d));
    }
    assert_eq!(read_tree(&d.join("steps")), read_tree(&d.join("ws/session")));
}

#[test]
fn errors_exit_nonzero_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(affordance(&["synth", "--output", "ws"], d));

    let out = affordance(&["project", "--config", "ws/config.json", "--output", "empty"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[IoError]"));

    ok(affordance(&["ingest", "--config", "ws/config.json", "--output", "s"], d));
    let out = affordance(&["verify", "--config", "ws/config.json", "--output", "s"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[StageNotReached]"));

    // A different seed changes the session id, so the synthesized labels no longer apply.
    let out = affordance(&["run", "--config", "ws/config.json", "--seed", "7", "--output", "r"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[SessionMismatch]"));

    let out = affordance(&["run"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
