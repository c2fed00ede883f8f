use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = "\
d = 16
mlp_hidden = 16
epochs = 2
train_videos = 16
eval_videos = 8
seeds = [3]
";

fn mams(dir: &Path, args: &[&str]) {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mams"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "tiny.toml"])
        .args(args)
        .status()
        .unwrap();
    assert!(status.success(), "mams {args:?} failed");
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    mams(tmp.path(), &["--out", "a", "--seed", "5", "gen-data"]);
    mams(tmp.path(), &["--out", "b", "--seed", "5", "gen-data"]);
    mams(tmp.path(), &["--out", "c", "--seed", "6", "gen-data"]);
    let a = read_dir_bytes(&tmp.path().join("a/train"));
    assert_eq!(a.len(), 1 + 2 * 16);
    assert_eq!(a, read_dir_bytes(&tmp.path().join("b/train")));
    assert_ne!(a, read_dir_bytes(&tmp.path().join("c/train")));
}

#[test]
fn train_then_eval_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    mams(dir, &["--out", "data", "gen-data"]);
    mams(dir, &["--out", "run", "train", "--data", "data"]);
    for f in ["checkpoint.bin", "metrics.jsonl", "selection.jsonl", "summary.csv", "config.toml"] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let audit = fs::read_to_string(dir.join("run/selection.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 8);

    mams(dir, &["--out", "eval", "--deterministic", "eval", "--checkpoint", "run/checkpoint.bin", "--data", "data"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(m["videos"], 8);
    for key in ["token_accuracy", "routing_rate", "mean_token_fraction"] {
        let v = m[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }

    mams(dir, &["--out", "mask", "inspect-mask", "--checkpoint", "run/checkpoint.bin", "--data", "data", "--video", "2"]);
    let pgm = fs::read_to_string(dir.join("mask/mask_v00002.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n64 64\n1\n"));
}

#[test]
fn training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    mams(tmp.path(), &["--out", "a", "train"]);
    mams(tmp.path(), &["--out", "b", "train"]);
    for f in ["metrics.jsonl", "selection.jsonl", "checkpoint.bin"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn sweep_writes_one_row_per_count_plus_mams() {
    let tmp = tempfile::tempdir().unwrap();
    mams(tmp.path(), &["--out", "s", "--frames", "2,4,8", "sweep"]);
    let mut rdr = csv::Reader::from_path(tmp.path().join("s/sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let labels: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(labels, ["baseline", "baseline", "baseline", "mams"]);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_mams"))
            .current_dir(tmp.path())
            .env("RUST_LOG", "off")
            .args(args)
            .output()
            .unwrap()
    };
    assert!(!run(&["--preset", "nope", "train"]).status.success());
    assert!(!run(&["--config", "tiny.toml", "--frames", "8,4", "sweep"]).status.success());
    assert!(!run(&["--config", "tiny.toml", "eval", "--checkpoint", "missing.bin"]).status.success());
}
