use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use lmcompress::cells::{ArchConfig, CellKind};
use lmcompress::langmodel::{LanguageModel, Vocabulary};
use lmcompress::numkit::Rng;
use lmcompress::pipeline::{load_model, save_model, ModelStats};

fn fixture(split: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/fixtures/fixture.{split}.txt"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmcompress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value_of(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in output"))
        .to_string()
}

fn train_small(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let (train, valid, test) = (fixture("train"), fixture("valid"), fixture("test"));
    let o = run(&[
        "train",
        "--train",
        train.to_str().unwrap(),
        "--valid",
        valid.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--hidden",
        "32",
        "--layers",
        "1",
        "--adam-epochs",
        "1",
        "--sgd-epochs",
        "1",
        "--max-batches",
        "20",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ]);
    stdout(&o);
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_input_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.lmc");
    let o = run(&["train", "--train", "no/such.txt", "--valid", "x", "--test", "y", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such.txt"));
    assert!(!out.exists());
}

#[test]
fn missing_output_directory_rejected_before_work() {
    let o = run(&["inspect", "--hidden", "8", "--vocab", "20", "--report", "/no/such/dir/r.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(run(&["inspect", "--bogus"]).status.code(), Some(2));
}

#[test]
fn train_writes_loadable_model_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = train_small(dir.path(), "a.lmc", "5");
    let b = train_small(dir.path(), "b.lmc", "5");
    let model = load_model(&a).unwrap();
    assert_eq!(model.net.vocab_size(), model.vocab.len());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let history: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.lmc.history.json")).unwrap()).unwrap();
    assert!(history.is_object());
}

#[test]
fn inspect_reports_dense_accounting() {
    let text = stdout(&run(&["inspect", "--hidden", "650", "--layers", "2", "--vocab", "10000"]));
    assert_eq!(value_of(&text, "matrix_params_m"), "19.76");
    assert_eq!(value_of(&text, "size_mb"), "79.1008");
    assert_eq!(value_of(&text, "model_id"), "lstm-2x650-dense");
}

#[test]
fn inspect_low_rank_counts() {
    let text = stdout(&run(&["inspect", "--hidden", "650", "--lr-cells", "128", "--lr-io", "128"]));
    assert_eq!(value_of(&text, "stats.total_params"), "4072800");
    assert_eq!(value_of(&text, "stats.matrix_params"), "4057600");
}

#[test]
fn structured_output_matches_report_file() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    let o = run(&["inspect", "--hidden", "16", "--vocab", "40", "--format", "structured", "--report", report.to_str().unwrap()]);
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(printed, saved);
    let stats: ModelStats = serde_json::from_value(printed["stats"].clone()).unwrap();
    assert_eq!(stats.total_params as u64, lmcompress::pipeline::param_count_dense(CellKind::Lstm, 2, 16, 40) + stats.bias_params as u64);
}

fn zero_model(dir: &Path) -> (PathBuf, usize) {
    let text = std::fs::read_to_string(fixture("train")).unwrap();
    let vocab = Vocabulary::build(&text, None, 1).unwrap();
    let n = vocab.len();
    let mut cfg = ArchConfig::new(CellKind::Gru, n, 8, 1);
    cfg.init_scale = 0.0;
    let model = LanguageModel::dense(vocab, &cfg, &mut Rng::new(0)).unwrap();
    let p = dir.join("zero.lmc");
    save_model(&model, &p).unwrap();
    (p, n)
}

#[test]
fn eval_of_uniform_model_is_vocab_size() {
    let dir = TempDir::new().unwrap();
    let (model, n) = zero_model(dir.path());
    let valid = fixture("valid");
    let o = run(&["eval", "--model", model.to_str().unwrap(), "--data", valid.to_str().unwrap(), "--segments", "4", "--format", "structured"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let ppl = v["perplexity"].as_f64().unwrap();
    assert!((ppl - n as f64).abs() < 1e-6 * n as f64, "{ppl} vs {n}");
    assert!((v["accuracy"].as_f64().unwrap() - 1.0 / n as f64).abs() < 1e-9);
}

#[test]
fn empty_spec_keeps_model_and_inputs_untouched() {
    let dir = TempDir::new().unwrap();
    let (model, _) = zero_model(dir.path());
    let spec = write(dir.path(), "empty.toml", "seed = 1\n");
    let before = std::fs::read(&model).unwrap();
    let spec_before = std::fs::read(&spec).unwrap();
    let out = dir.path().join("out.lmc");
    stdout(&run(&["compress", "--model", model.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(std::fs::read(&model).unwrap(), before);
    assert_eq!(std::fs::read(&spec).unwrap(), spec_before);
    let a = ModelStats::of(&load_model(&model).unwrap());
    let b = ModelStats::of(&load_model(&out).unwrap());
    assert_eq!(a, b);
}

#[test]
fn compress_shrinks_and_inspect_agrees() {
    let dir = TempDir::new().unwrap();
    let model = train_small(dir.path(), "m.lmc", "2");
    let spec = write(
        dir.path(),
        "spec.toml",
        "seed = 4\n[[step]]\nop = \"lr_cells\"\nrank = 8\ninit = { kind = \"svd\" }\n[[step]]\nop = \"prune\"\ncomponents = { output = 0.5 }\n[[step]]\nop = \"quantize\"\ncomponents = [\"all\"]\n",
    );
    let out = dir.path().join("c.lmc");
    let text = stdout(&run(&["compress", "--model", model.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let before: u64 = value_of(&text, "before.stored_bytes").parse().unwrap();
    let after: u64 = value_of(&text, "after.stored_bytes").parse().unwrap();
    assert!(after < before / 3, "{after} vs {before}");
    let inspected = stdout(&run(&["inspect", "--model", out.to_str().unwrap()]));
    assert_eq!(value_of(&inspected, "stats.stored_bytes").parse::<u64>().unwrap(), after);
    assert!(value_of(&inspected, "model_id").contains("low_rank"));
}

#[test]
fn bad_spec_order_is_config_error() {
    let dir = TempDir::new().unwrap();
    let (model, _) = zero_model(dir.path());
    let spec = write(dir.path(), "bad.toml", "[[step]]\nop = \"quantize\"\ncomponents = [\"all\"]\n[[step]]\nop = \"prune\"\ncomponents = { output = 0.5 }\n");
    let out = dir.path().join("o.lmc");
    let o = run(&["compress", "--model", model.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn corrupt_model_fails_with_runtime_code() {
    let dir = TempDir::new().unwrap();
    let (model, _) = zero_model(dir.path());
    let mut bytes = std::fs::read(&model).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&model, bytes).unwrap();
    let o = run(&["inspect", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_runs_requested_iterations() {
    let dir = TempDir::new().unwrap();
    let (model, _) = zero_model(dir.path());
    let m = model.to_str().unwrap();
    let text = stdout(&run(&["bench", "--model", m, "--warmup", "3", "--iters", "7"]));
    assert_eq!(value_of(&text, "warmup_iters"), "3");
    assert_eq!(value_of(&text, "measured_iters"), "7");
    assert_eq!(value_of(&text, "macs"), value_of(&text, "counted_macs"));
    let paired: Value = serde_json::from_str(&stdout(&run(&["bench", "--model", m, "--compare", m, "--iters", "5", "--format", "structured"]))).unwrap();
    assert!(paired["speedup"].as_f64().unwrap() > 0.0);
}
