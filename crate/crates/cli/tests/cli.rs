use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fens"))
        .current_dir(dir)
        .env_remove("FENS_HOME")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let no_dataset = fens(dir.path(), &["tune"]);
    assert_eq!(no_dataset.status.code(), Some(2), "{}", stderr(&no_dataset));
    assert!(stderr(&no_dataset).contains("dataset"));
    assert!(stderr(&no_dataset).to_lowercase().contains("usage"));

    let unknown = fens(dir.path(), &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing_config = fens(dir.path(), &["train", "--config", "missing.json"]);
    assert_eq!(missing_config.status.code(), Some(2), "{}", stderr(&missing_config));

    let help = fens(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("train"));
}

#[test]
fn synth_dataset_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        [
            "dataset", "synth", "--classes", "3", "--per-class", "2", "--height", "16",
            "--width", "16", "--seed", "7", "--out", out,
        ]
        .map(String::from)
    };
    let first = fens(dir.path(), &args("a").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let second = fens(dir.path(), &args("b").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(second.status.code(), Some(0));

    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/synth.csv"), read("b/synth.csv"));
    assert_eq!(read("a/synth.json"), read("b/synth.json"));

    let inspect = fens(
        dir.path(),
        &["dataset", "inspect", "a/synth.csv", "--height", "16", "--width", "16"],
    );
    assert_eq!(inspect.status.code(), Some(0), "{}", stderr(&inspect));
    let text = stdout(&inspect);
    assert!(text.contains("samples=6"), "{text}");
    assert!(text.contains("classes=3"), "{text}");
}

#[test]
fn report_without_runs_fails_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = fens(dir.path(), &["report", "--out", "empty"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("no completed entries"), "{}", stderr(&out));
}

#[test]
fn flags_override_config_and_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "dataset": {"kind": "synth", "classes": 4, "per-class": 6, "seed": 9},
        "families": ["shuffle"],
        "strategies": ["tfs"],
        "width-mult": 0.5,
        "cv": {"k": 2, "train-fraction": 0.75},
        "train": {"epochs": 1, "batch-size": 8},
        "seed": 3
    });
    fs::write(dir.path().join("cfg.json"), serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let train = fens(
        dir.path(),
        &["train", "--config", "cfg.json", "--seed", "9", "--out", "o"],
    );
    assert_eq!(train.status.code(), Some(0), "{}", stderr(&train));
    assert!(stdout(&train).contains("entry=synth-shuffle-tfs status=done"), "{}", stdout(&train));

    let persisted: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(persisted["seed"], 9, "flag must beat the file value");
    assert!(dir.path().join("o/reports/summary.csv").exists());

    let eval = fens(
        dir.path(),
        &["eval", "--config", "cfg.json", "--seed", "9", "--out", "o"],
    );
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("member=synth-shuffle-tfs"), "{}", stdout(&eval));

    let ensemble = fens(dir.path(), &["ensemble", "--out", "o"]);
    assert_eq!(ensemble.status.code(), Some(0), "{}", stderr(&ensemble));
    assert!(stdout(&ensemble).contains("combination=All-Ens"), "{}", stdout(&ensemble));

    let bench = fens(
        dir.path(),
        &[
            "bench", "--config", "cfg.json", "--seed", "9", "--out", "o",
            "--bench-batch-size", "4", "--bench-repetitions", "3", "--bench-warmup", "0",
        ],
    );
    assert_eq!(bench.status.code(), Some(0), "{}", stderr(&bench));
    assert!(stdout(&bench).contains("subject=synth-shuffle-tfs"), "{}", stdout(&bench));
    assert!(dir.path().join("o/reports/bench.csv").exists());

    let report = fens(dir.path(), &["report", "--out", "o"]);
    assert_eq!(report.status.code(), Some(0), "{}", stderr(&report));
    assert!(stdout(&report).contains("bench.md"), "{}", stdout(&report));
}

#[test]
fn fens_home_sets_the_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fens"))
        .current_dir(dir.path())
        .env("FENS_HOME", dir.path().join("home"))
        .args([
            "train", "--synth-classes", "3", "--per-class-is-wrong", "x",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown flag is a usage error");

    let out = Command::new(env!("CARGO_BIN_EXE_fens"))
        .current_dir(dir.path())
        .env("FENS_HOME", dir.path().join("home"))
        .args([
            "train", "--synth-classes", "3", "--synth-per-class", "6", "--synth-seed", "9",
            "--families", "shuffle", "--width-mult", "0.5", "--folds", "2",
            "--train-fraction", "0.75", "--epochs", "1", "--batch-size", "8",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("home/members.json").exists());
    assert!(!dir.path().join("fens-runs").exists());
}
