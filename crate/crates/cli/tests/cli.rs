use std::path::Path;
use std::process::{Command, Output};

fn skipstep(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_skipstep"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("SKIPSTEP_OUT")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const TRAIN_1D: &str = r#"
[schedule]
kind = "linear"
steps = 50

[data]
kind = "gaussian"
mean = [0.5]
var = [0.2]
n = 200
seed = 1

[model]
hidden = [16]
time_dim = 4

[train]
steps = 10
batch_size = 32
seed = 3
"#;

const ORACLE_2D: &str = r#"
[schedule]
kind = "linear"
steps = 100
beta_start = 1e-3
beta_end = 0.2

[data]
kind = "gaussian"
mean = [0.5, -1.0]
var = [0.3, 1.5]
n = 100

[denoiser]
source = "oracle"

[sample]
sampler = "skipped"
steps = 25
n = 300
seed = 4
scatter = true

[bench]
samplers = ["skipped", "naive_subset", "mixed"]
budgets = [25, 10]
seeds = [0, 1]
n_samples = 200
projections = 16

[ablation]
budget = 25
"#;

#[test]
fn train_writes_checkpoint_and_trace_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), TRAIN_1D, &["train"]);
    assert!(o.status.success(), "{}", text(&o));
    let ckpt = std::fs::read(dir.path().join("out/model.ckpt")).unwrap();
    let trace = std::fs::read_to_string(dir.path().join("out/loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    assert!(trace.starts_with("step,loss\n"));
    let o = skipstep(dir.path(), TRAIN_1D, &["train"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("out/model.ckpt")).unwrap(), ckpt);
}

#[test]
fn invalid_loss_mode_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), TRAIN_1D, &["train", "--set", "train.loss=\"fancy\""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("train.loss"), "{}", text(&o));
}

#[test]
fn nan_training_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), TRAIN_1D, &["train", "--set", "train.learning_rate=1e8", "--set", "train.steps=300"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn sample_writes_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), ORACLE_2D, &["sample"]);
    assert!(o.status.success(), "{}", text(&o));
    let first = std::fs::read_to_string(dir.path().join("out/samples.csv")).unwrap();
    assert_eq!(first.lines().count(), 301);
    assert!(first.starts_with("x0,x1\n"));
    assert!(dir.path().join("out/samples.svg").exists());
    let o = skipstep(dir.path(), ORACLE_2D, &["sample"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("out/samples.csv")).unwrap(), first);
}

#[test]
fn sample_binary_container_and_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(skipstep(dir.path(), TRAIN_1D, &["train"]).status.success());
    let ckpt = dir.path().join("out/model.ckpt");
    let cfg = format!(
        "{TRAIN_1D}\n[denoiser]\nsource = \"checkpoint\"\npath = {:?}\n\n[sample]\nsampler = \"ddim\"\nsteps = 5\nn = 7\n\n[output]\nsamples = \"s.bin\"\n",
        ckpt.display().to_string()
    );
    let o = skipstep(dir.path(), &cfg, &["sample"]);
    assert!(o.status.success(), "{}", text(&o));
    let x = skipstep::io::read_samples(&dir.path().join("out/s.bin")).unwrap();
    assert_eq!(x.dim(), (7, 1));
}

#[test]
fn mixed_cutoff_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), ORACLE_2D, &["sample", "--set", "sample.sampler=mixed", "--set", "sample.cutoff=26"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(
        dir.path(),
        ORACLE_2D,
        &["sample", "--set", "denoiser.source=checkpoint", "--set", "denoiser.path=/nonexistent/model.ckpt"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[test]
fn outputs_cannot_escape_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), ORACLE_2D, &["sample", "--set", "output.samples=../escape.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("escape.csv").exists());
}

#[test]
fn bench_and_ablate_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), ORACLE_2D, &["bench"]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
    assert!(csv.starts_with(&skipstep::bench::CSV_HEADER.join(",")));
    assert!(text(&o).contains("naive_subset"));

    let o = skipstep(dir.path(), ORACLE_2D, &["ablate"]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 * 2);
    assert!(dir.path().join("out/ablation.svg").exists());
    assert!(text(&o).contains("best cutoff"));
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = skipstep(dir.path(), "[verify]\nmc_samples = 5000\n", &["verify"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("PASS posterior_bruteforce_t5"));

    let o = skipstep(dir.path(), "[verify]\nmc_samples = 5000\n", &["verify", "--set", "verify.fault=post_coef_x0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("FAIL posterior_bruteforce_t5"), "{}", text(&o));
}

#[test]
fn unreadable_config_is_an_io_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_skipstep"))
        .args(["verify", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
