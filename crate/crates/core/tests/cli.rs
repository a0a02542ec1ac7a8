#![cfg(feature = "cli")]

use std::path::Path;
use std::process::{Command, Output};

fn curator(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curator"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(curator(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(curator(dir.path(), &["embed", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(curator(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_1_with_error_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = curator(dir.path(), &["synth", "--n", "60", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    std::fs::remove_file(dir.path().join("scores.jsonl")).unwrap();
    let out = curator(dir.path(), &["score"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("curator score: MissingScore:"), "{}", stderr(&out));

    let out = curator(dir.path(), &["embed", "--feature-size", "zero"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("BadConfig"), "{}", stderr(&out));
}

#[test]
fn stages_run_then_rerun_as_noops() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(curator(d, &["synth", "--n", "300", "--seed", "3"]).status.success());
    std::fs::write(
        d.join("curator.conf"),
        "# small corpus\nsubsets = 10\nclusters = 3\nalpha = 30\nepochs = 5\nseed = 3\noracle = oracle.tsv\n",
    )
    .unwrap();
    let stages = ["score", "embed", "split", "train-selector", "curate", "report"];
    for stage in stages {
        let out = curator(d, &[stage, "--config", "curator.conf"]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
        assert!(stderr(&out).contains(&format!("stage={stage} status=done")), "{}", stderr(&out));
    }
    let selected = std::fs::read_to_string(d.join("work/curate/selected.manifest")).unwrap();
    assert_eq!(selected.lines().count(), 30);
    for name in ["report.json", "quotas.tsv", "summary.jsonl", "selected.manifest"] {
        assert!(d.join("work/report").join(name).exists(), "missing {name}");
    }

    for stage in stages {
        let out = curator(d, &[stage, "--config", "curator.conf"]);
        assert!(stderr(&out).contains(&format!("stage={stage} status=up-to-date")), "{}", stderr(&out));
    }

    // A flag overriding the file invalidates curate and report only.
    let out = curator(d, &["embed", "--config", "curator.conf", "--alpha", "20"]);
    assert!(stderr(&out).contains("status=up-to-date"));
    let out = curator(d, &["curate", "--config", "curator.conf", "--alpha", "20"]);
    assert!(stderr(&out).contains("stage=curate status=done"), "{}", stderr(&out));
    let selected = std::fs::read_to_string(d.join("work/curate/selected.manifest")).unwrap();
    assert_eq!(selected.lines().count(), 20);
}
