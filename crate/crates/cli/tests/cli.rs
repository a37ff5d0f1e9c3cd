use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lstm_am_abc::config::{component_seed, STREAM_MODEL};
use lstm_am_abc::evaluation::STREAM_INIT;
use lstm_am_abc::model::{load_model, ModelParams};
use lstm_am_abc::numerics::Rng;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_lstm-am-abc");

/// Keeps runs short: 4-d embeddings, 2 hidden units, no dense hidden layer.
const SMALL: &[&str] = &[
    "--set", "hidden_dim=2",
    "--set", "ffn_hidden=none",
    "--epochs", "3",
    "--abc-population", "5",
    "--abc-evaluations", "40",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    extra.iter().chain(base).map(|s| s.to_string()).collect()
}

fn run_owned(dir: &Path, args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(dir, &refs)
}

/// Dataset `d.tsv` and 4-d embeddings `e.txt` in a fresh directory.
fn corpus(templates: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--templates", templates, "--copies", "2", "--seed", "3", "--out", "d.tsv"]);
    ok(dir.path(), &["embed", "--data", "d.tsv", "--out", "e.txt", "--dim", "4", "--seed", "3"]);
    dir
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

fn data_lines(dir: &Path, name: &str) -> Vec<String> {
    String::from_utf8(read(dir, name))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[test]
fn generate_is_deterministic_and_reports_balance() {
    let dir = TempDir::new().unwrap();
    let args = ["generate", "--templates", "20", "--copies", "3", "--seed", "7"];
    let summary = ok(dir.path(), &args);
    let first = read(dir.path(), "synthetic.tsv");
    ok(dir.path(), &args);
    assert_eq!(first, read(dir.path(), "synthetic.tsv"));
    assert!(summary.contains("positives 60 negatives 180 negatives:positives 3"), "{summary}");
    assert!(String::from_utf8(first).unwrap().contains("# seed = 7"));
}

#[test]
fn negative_count_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["generate", "--templates", "-3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn embed_header_follows_dim_and_is_reproducible() {
    let dir = corpus("6");
    let header = data_lines(dir.path(), "e.txt")[0].clone();
    assert!(header.ends_with(" 4"), "{header}");
    let before = read(dir.path(), "e.txt");
    ok(dir.path(), &["embed", "--data", "d.tsv", "--out", "e.txt", "--dim", "4", "--seed", "3"]);
    assert_eq!(before, read(dir.path(), "e.txt"));
}

#[test]
fn missing_input_names_the_file() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["embed", "--data", "absent.tsv", "--out", "e.txt"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[data]: ") && err.contains("absent.tsv"), "{err}");
}

#[test]
fn zero_learning_rate_keeps_the_random_initialization() {
    let dir = corpus("6");
    let args = with(
        SMALL,
        &["train", "--data", "d.tsv", "--embeddings", "e.txt", "--out", "m.txt", "--init", "random", "--lr", "0", "--seed", "5"],
    );
    let out = run_owned(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let model = load_model(dir.path().join("m.txt")).unwrap();
    let mut rng = Rng::new(component_seed(5, STREAM_MODEL)).derive(STREAM_INIT);
    let expected = ModelParams::init_random(&model.arch, 1.0, &mut rng).unwrap();
    assert_eq!(model, expected);
    assert!(!dir.path().join("m.txt.abc").exists());
}

#[test]
fn abc_training_writes_monotone_history_and_is_reproducible() {
    let dir = corpus("6");
    let args = with(
        SMALL,
        &["train", "--data", "d.tsv", "--embeddings", "e.txt", "--out", "m.txt", "--init", "abc", "--seed", "2"],
    );
    assert!(run_owned(dir.path(), &args).status.success());
    let fitness: Vec<f64> = data_lines(dir.path(), "m.txt.abc")
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(fitness.len() > 1);
    assert!(fitness.windows(2).all(|w| w[1] >= w[0]));
    let model = read(dir.path(), "m.txt");
    let history = read(dir.path(), "m.txt.history");
    assert!(run_owned(dir.path(), &args).status.success());
    assert_eq!(model, read(dir.path(), "m.txt"));
    assert_eq!(history, read(dir.path(), "m.txt.history"));
    let text = String::from_utf8(model).unwrap();
    assert!(text.contains("# init = abc") && text.contains("# data = d.tsv"));
}

#[test]
fn cross_validated_eval_has_one_row_per_fold() {
    let dir = corpus("10");
    let args = with(
        SMALL,
        &["eval", "--data", "d.tsv", "--embeddings", "e.txt", "--cv", "10", "--threshold", "0.515", "--out", "r.txt"],
    );
    let out = run_owned(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(read(dir.path(), "r.txt")).unwrap();
    assert!(text.contains("# threshold = 0.515"));
    let rows: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("fold\t")).skip(1).collect();
    assert_eq!(rows.len(), 10);
    for metric in ["recall\t", "mse\t", "pearsonR\t"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(metric)).count(), 1);
    }
}

#[test]
fn eval_scores_a_saved_model() {
    let dir = corpus("6");
    let train = with(SMALL, &["train", "--data", "d.tsv", "--embeddings", "e.txt", "--out", "m.txt"]);
    assert!(run_owned(dir.path(), &train).status.success());
    let stdout = ok(dir.path(), &["eval", "--data", "d.tsv", "--embeddings", "e.txt", "--model", "m.txt", "--out", "r.txt"]);
    assert!(stdout.contains("recall mean"));
    let out = run(dir.path(), &["eval", "--data", "d.tsv", "--embeddings", "e.txt", "--out", "r.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fold_without_positives_is_named() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--templates", "2", "--copies", "1", "--seed", "1", "--out", "d.tsv"]);
    ok(dir.path(), &["embed", "--data", "d.tsv", "--out", "e.txt", "--dim", "4"]);
    let args = with(SMALL, &["eval", "--data", "d.tsv", "--embeddings", "e.txt", "--cv", "4", "--out", "r.txt"]);
    let out = run_owned(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("fold ") && err.contains("recall"), "{err}");
}

#[test]
fn compare_pairs_the_arms() {
    let dir = corpus("6");
    let args = with(
        SMALL,
        &["compare", "--data", "d.tsv", "--embeddings", "e.txt", "--cv", "3", "--out", "c.txt", "--seed", "4"],
    );
    assert!(run_owned(dir.path(), &args).status.success());
    let first = read(dir.path(), "c.txt");
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.contains("# paired folds: identical"));
    for arm in ["random", "abc"] {
        assert_eq!(text.lines().filter(|l| l.split('\t').nth(1) == Some(arm)).count(), 3);
    }
    assert!(run_owned(dir.path(), &args).status.success());
    assert_eq!(first, read(dir.path(), "c.txt"));
}

#[test]
fn gradcheck_statuses_and_groups() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--step", "1e-5", "--arch", "tiny"]);
    for group in ["blstm1", "blstm2", "attn1", "attn2", "ffn0", "ffn1", "max"] {
        assert!(out.lines().any(|l| l.starts_with(&format!("{group}\t"))), "{out}");
    }
    let fail = run(dir.path(), &["gradcheck", "--tolerance", "1e-12"]);
    assert_eq!(fail.status.code(), Some(3));
    let err = stderr(&fail);
    assert!(err.starts_with("error[gradcheck]: ") && err.contains("max relative error"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = corpus("6");
    let cfg: PathBuf = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 9\nepochs = 2\nhidden_dim = 2\nffn_hidden = none\n").unwrap();
    ok(dir.path(), &["--config", "run.cfg", "train", "--data", "d.tsv", "--embeddings", "e.txt", "--out", "m.txt", "--epochs", "4"]);
    let text = String::from_utf8(read(dir.path(), "m.txt")).unwrap();
    assert!(text.contains("# seed = 9") && text.contains("# epochs = 4"));
    assert_eq!(data_lines(dir.path(), "m.txt.history").len(), 4);

    fs::write(&cfg, "colour = red\n").unwrap();
    let out = run(dir.path(), &["--config", "run.cfg", "gradcheck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = corpus("6");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let args = with(
            SMALL,
            &["compare", "--data", "d.tsv", "--embeddings", "e.txt", "--cv", "3", "--out", "c.txt", "--threads", threads],
        );
        assert!(run_owned(dir.path(), &args).status.success());
        outputs.push(read(dir.path(), "c.txt"));
    }
    assert_eq!(outputs[0], outputs[1]);
}
