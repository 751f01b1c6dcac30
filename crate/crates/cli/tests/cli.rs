use std::path::Path;
use std::process::{Command, Output};

fn v2x(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2x")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn count_ops_table_at_twenty_vehicles() {
    let dir = tempfile::tempdir().unwrap();
    let out = v2x(&["--out", path(dir.path()), "count-ops", "--s", "20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.split_whitespace().next() == Some("20")).expect("row for s=20");
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[1], "60");
    assert_eq!(cols[2], "4248000");
    assert_eq!(cols[3], "864000");
    let csv = std::fs::read_to_string(dir.path().join("ops.csv")).unwrap();
    assert!(csv.starts_with("# manifest sha256="));
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn short_training_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = v2x(&["--out", path(d), "--seed", "7", "--iterations", "100", "train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["manifest.toml", "metrics.csv", "losses.csv", "checkpoints/q.online", "checkpoints/sage.live"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn unknown_verb_fails() {
    let out = v2x(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = v2x(&["--out", path(dir.path()), "test", "--checkpoints", path(&dir.path().join("nothing"))]);
    assert_eq!(missing.status.code(), Some(3));

    let bad = Command::new(env!("CARGO_BIN_EXE_v2x"))
        .args(["--out", path(dir.path()), "count-ops"])
        .env("V2X__ENV__PAYLOAD_BITS", "-1")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = \"not a number\"\n").unwrap();
    let parse = v2x(&["--config", path(&cfg), "--out", path(dir.path()), "count-ops"]);
    assert_eq!(parse.status.code(), Some(2));
}

#[test]
fn trained_checkpoints_feed_test_and_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    let strat = dir.path().join("strat");
    assert!(v2x(&["--out", path(&run), "--seed", "3", "--iterations", "60", "train"]).status.success());

    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "[run]\ntest_resets = 2\ntest_samples = 3\n").unwrap();
    let out = v2x(&[
        "--config",
        path(&cfg),
        "--out",
        path(&eval),
        "--vehicles",
        "10,20",
        "test",
        "--checkpoints",
        path(&run.join("checkpoints")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2 + 2 * 2 * 3);

    let out = v2x(&["--out", path(&strat), "strategy", "--decisions", path(&eval.join("decisions.csv"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(strat.join("strategy.csv")).unwrap().lines().nth(1).unwrap().starts_with("remaining_lower_s"));
}
