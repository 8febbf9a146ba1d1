//! End-to-end runs of the `dear` binary.

use std::path::Path;
use std::process::{Command, Output};

fn dear(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dear"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn metric(text: &str, key: &str) -> f64 {
    let table: toml::Table = toml::from_str(text).unwrap();
    table[key].as_float().unwrap()
}

#[test]
fn gen_data_writes_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = dear(dir.path(), &["gen-data", "--sessions", "100", "--out", "log.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = dear::sim::read_log_file(&dir.path().join("log.txt")).unwrap();
    assert_eq!(log.sessions.len(), 100);
    let manifest: toml::Table =
        toml::from_str(&std::fs::read_to_string(dir.path().join("log.txt.manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["command"].as_str(), Some("gen-data"));
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    assert!(manifest["seeds"].as_array().is_some());
    assert!(manifest["wall_time_secs"].as_float().is_some());
    assert!(manifest.contains_key("config"));
}

#[test]
fn gradcheck_passes_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = dear(dir.path(), &["gradcheck", "--seeds", "2", "--out", "grad.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("PASS"));
    assert!(dir.path().join("grad.txt.manifest.toml").exists());
}

#[test]
fn untrained_checkpoint_scores_near_random_band() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("cfg.toml"), "train.steps = 0\n").unwrap();
    assert!(dear(p, &["gen-data", "--sessions", "20", "--out", "log.txt"]).status.success());
    let o = dear(p, &["--config", "cfg.toml", "train", "--log", "log.txt", "--out", "net.ckpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let greedy = dear(p, &["evaluate", "--checkpoint", "net.ckpt", "--episodes", "300", "--out", "g.toml"]);
    let random = dear(p, &["evaluate", "--policy", "random", "--episodes", "300", "--out", "r.toml"]);
    assert!(greedy.status.success() && random.status.success());
    let g = metric(&stdout(&greedy), "mean_reward");
    let r = metric(&stdout(&random), "mean_reward");
    assert!((g - r).abs() <= 0.3 * r, "untrained {g} vs random {r}");
}

#[test]
fn train_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("a.toml"), "[train]\nsteps = 60\nbatch_size = 8\ntarget_sync = 25\n").unwrap();
    std::fs::write(p.join("b.toml"), "[train]\nsteps = 25\nbatch_size = 8\ntarget_sync = 25\n").unwrap();
    assert!(dear(p, &["gen-data", "--sessions", "10", "--out", "log.txt"]).status.success());
    let full = dear(p, &["--config", "a.toml", "train", "--log", "log.txt", "--out", "full.ckpt", "--trace", "full.csv"]);
    assert!(full.status.success(), "{}", stderr(&full));
    assert!(dear(p, &["--config", "b.toml", "train", "--log", "log.txt", "--out", "half.ckpt"]).status.success());
    let rest = dear(
        p,
        &["--config", "a.toml", "train", "--log", "log.txt", "--resume", "half.ckpt", "--out", "rest.ckpt"],
    );
    assert!(rest.status.success(), "{}", stderr(&rest));
    let a = dear::cli::Checkpoint::load(&p.join("full.ckpt")).unwrap();
    let b = dear::cli::Checkpoint::load(&p.join("rest.ckpt")).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.step, 60);
    let trace = std::fs::read_to_string(p.join("full.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
    assert!(p.join("full.ckpt.manifest.toml").exists());
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let usage = dear(p, &["train", "--log", "x", "--live", "--out", "y"]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(stderr(&usage).contains("error code=2 kind=usage"));

    std::fs::write(p.join("bad.toml"), "[train]\ngamma = 1.5\n").unwrap();
    let config = dear(p, &["--config", "bad.toml", "gradcheck", "--out", "g.txt"]);
    assert_eq!(config.status.code(), Some(3));
    let line = stderr(&config);
    assert!(line.contains("kind=config") && line.contains("γ ∈ [0,1]"), "{line}");

    std::fs::write(p.join("junk.ckpt"), "not a checkpoint").unwrap();
    let data = dear(p, &["evaluate", "--checkpoint", "junk.ckpt", "--out", "m.toml"]);
    assert_eq!(data.status.code(), Some(4));

    let runtime = dear(p, &["sweep", "--alphas", "0,1", "--out", "s.txt"]);
    assert_eq!(runtime.status.code(), Some(5));
}

#[test]
fn environment_override_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dear"))
        .args(["gen-data", "--sessions", "5", "--out", "log.txt"])
        .current_dir(dir.path())
        .env("DEAR_ENV__SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success());
    let manifest = std::fs::read_to_string(dir.path().join("log.txt.manifest.toml")).unwrap();
    assert!(manifest.contains("env.seed"), "{manifest}");
    assert!(manifest.contains("seeds = [99, 11]"), "{manifest}");
}
