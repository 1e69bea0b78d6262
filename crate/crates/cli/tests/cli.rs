use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn oodhcn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodhcn")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = oodhcn(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str], cwd: &Path) -> String {
    let out = oodhcn(args, cwd);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

const SMALL: [&str; 10] = [
    "--set",
    "model.embedding_dim=16",
    "--set",
    "model.dialog_hidden=24",
    "--set",
    "model.predictor_hidden=24",
    "--set",
    "train.max_epochs=3",
    "--set",
    "turn_dropout.ratio=0.4",
];

fn toy(dir: &Path) {
    ok(&["toy", "--seed", "2", "--n-dialogs", "60", "--n-actions", "12", "--out-dir", "d"], dir);
}

fn augment(dir: &Path, out: &str, seed: &str) {
    ok(
        &[
            "augment",
            "--input",
            "d/test.txt",
            "--ood-pool",
            "d/foreign.txt",
            "--segment-pool",
            "d/segments.txt",
            "--seed",
            seed,
            "--output",
            out,
            "--stats-out",
            "stats.txt",
        ],
        dir,
    );
}

#[test]
fn version_lists_format_versions() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(&["--version"], dir.path());
    for name in ["corpus format", "label format", "checkpoint format", "report format"] {
        assert!(v.contains(name), "{v}");
    }
}

#[test]
fn augmentation_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    augment(d, "a/test.txt", "9");
    augment(d, "b/test.txt", "9");
    augment(d, "c/test.txt", "10");
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/test.txt"), read("b/test.txt"));
    assert_eq!(read("a/test.labels"), read("b/test.labels"));
    assert_ne!(read("a/test.txt"), read("c/test.txt"));
    let labels = String::from_utf8(read("a/test.labels")).unwrap();
    assert!(labels.contains("\tTURN_OOD") && labels.contains("\tSEGMENT_OOD"));
    let stats = fs::read_to_string(d.join("stats.txt")).unwrap();
    assert!(stats.contains("config.seed = 10") && stats.contains("block_start_rate"));
}

#[test]
fn missing_inputs_name_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    let err = fail(&["train", "--train", "nope.txt", "--dev", "d/dev.txt", "--out-checkpoint", "m.ckpt"], d);
    assert!(err.contains("--train nope.txt"), "{err}");
    let err = fail(
        &[
            "augment",
            "--input",
            "d/test.txt",
            "--ood-pool",
            "gone.txt",
            "--segment-pool",
            "d/segments.txt",
            "--output",
            "x.txt",
        ],
        d,
    );
    assert!(err.contains("--ood-pool gone.txt"), "{err}");
    let err = fail(&["evaluate", "--checkpoint", "none.ckpt", "--test", "d/test.txt"], d);
    assert!(err.contains("--checkpoint none.ckpt"), "{err}");
    let err = fail(&["pipeline", "--out-dir", "o", "--set", "model.depth=3"], d);
    assert!(err.contains("model.depth"), "{err}");
}

#[test]
fn train_evaluate_report_compose_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    augment(d, "aug/test.txt", "4");
    let mut args = vec![
        "train",
        "--train",
        "d/train.txt",
        "--dev",
        "d/dev.txt",
        "--lexicon",
        "d/lexicon.txt",
        "--vocab-from",
        "aug/test.txt",
        "--vocab-from",
        "d/foreign.txt",
        "--seed",
        "3",
        "--out-checkpoint",
        "m/td.ckpt",
        "--history-out",
        "m/td.tsv",
    ];
    args.extend(SMALL);
    ok(&args, d);
    let history = fs::read_to_string(d.join("m/td.tsv")).unwrap();
    assert!(history.contains("# config.turn_dropout.ratio = 0.4"), "{history}");
    ok(
        &[
            "evaluate",
            "--checkpoint",
            "m/td.ckpt",
            "--test",
            "aug/test.txt",
            "--labels",
            "aug/test.labels",
            "--report-out",
            "r/td.report",
            "--name",
            "TD-HCN",
        ],
        d,
    );
    let report = fs::read_to_string(d.join("r/td.report")).unwrap();
    assert!(report.contains("config.run.seed = 3") && report.contains("ood_f1 = "), "{report}");
    let table = ok(&["report", "r/td.report", "--csv-out", "r/t.csv", "--table-out", "r/t.txt"], d);
    assert!(table.contains("TD-HCN"));
    assert_eq!(fs::read_to_string(d.join("r/t.txt")).unwrap(), table);
    assert!(fs::read_to_string(d.join("r/t.csv")).unwrap().starts_with("model,"));
}

#[test]
fn gridsearch_writes_one_record_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    let mut args = vec![
        "gridsearch",
        "--train",
        "d/train.txt",
        "--dev",
        "d/dev.txt",
        "--stage1-grid",
        "8,16",
        "--stage2-grid",
        "0.1,0.4",
        "--jobs",
        "2",
        "--results-out",
        "g.txt",
        "--out-checkpoint",
        "g.ckpt",
    ];
    args.extend(SMALL);
    ok(&args, d);
    let results = fs::read_to_string(d.join("g.txt")).unwrap();
    assert_eq!(results.lines().filter(|l| l.starts_with("stage = ")).count(), 4);
    assert!(results.lines().last().unwrap().starts_with("best\t"));
    assert!(d.join("g.ckpt").exists());
}

#[test]
fn pipeline_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.conf"), "[run]\nseed = 4\n\n[toy]\nn_dialogs = 60\nn_actions = 12\n").unwrap();
    let mut args = vec!["pipeline", "--config", "run.conf", "--out-dir", "a"];
    args.extend(SMALL);
    let first = ok(&args, d);
    args[4] = "b";
    let second = ok(&args, d);
    assert_eq!(first, second);
    for f in ["augmented/test.txt", "augmented/test.labels", "reports/TD-HCN-seed4.report", "reports/table.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}
