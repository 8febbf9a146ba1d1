//! Subcommand bodies. Each writes its artifact plus a manifest beside it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use super::checkpoint::Checkpoint;
use super::config::LoadedConfig;
use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_suite, alpha_sweep, never_advertise, run_online_test, uniform_random, AblationReport, EvalConfig,
    EvalMetrics, SweepReport, ABLATION_ARMS,
};
use crate::nn::{CheckConfig, GradCheckReport};
use crate::qnet::QNetwork;
use crate::sim::{generate_log, read_log_file, LogSummary, SessionEnv};
use crate::trainer::{td_gradcheck, write_trace, Trainer};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Bad flags or arguments.
pub const EXIT_USAGE: i32 = 2;
/// Config file or override rejected.
pub const EXIT_CONFIG: i32 = 3;
/// Unreadable or malformed input data, logs or checkpoints.
pub const EXIT_DATA: i32 = 4;
/// Failure while running (numerical, contract or a failed check).
pub const EXIT_RUNTIME: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Data(_) | Error::Schema(_) | Error::Checkpoint(_) | Error::Io { .. } => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// One-line error report: `error code=<n> kind=<kind> message="<text>"`.
pub fn error_line(e: &Error) -> String {
    let kind = match exit_code(e) {
        EXIT_CONFIG => "config",
        EXIT_DATA => "data",
        _ => "runtime",
    };
    format!("error code={} kind={kind} message={:?}", exit_code(e), e.to_string())
}

/// Shared bookkeeping for one invocation.
pub struct Run<'a> {
    pub command: &'static str,
    pub args: Vec<String>,
    pub cfg: &'a LoadedConfig,
    started: SystemTime,
    clock: Instant,
}

impl<'a> Run<'a> {
    pub fn new(command: &'static str, args: Vec<String>, cfg: &'a LoadedConfig) -> Self {
        Self {
            command,
            args,
            cfg,
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    fn finish(&self, seeds: Vec<u64>, primary: &Path, extra: &[&Path]) -> Result<PathBuf> {
        let mut m = Manifest::new(self.command, self.args.clone(), self.cfg, seeds, self.started, self.clock.elapsed())
            .with_output(primary);
        for p in extra {
            m = m.with_output(p);
        }
        m.write_beside(primary)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Generates `sessions` behavior-policy sessions into `out`.
pub fn gen_data(run: &Run, sessions: u64, out: &Path) -> Result<LogSummary> {
    let c = &run.cfg.config;
    let mut env = SessionEnv::new(c.env, c.train.dims.window)?;
    let mut w = create(out)?;
    let summary = generate_log(&mut env, &c.behavior, sessions, &mut w)?;
    w.flush().map_err(io_at(out))?;
    run.finish(vec![c.env.seed, c.behavior.seed], out, &[])?;
    Ok(summary)
}

pub enum TrainSource<'p> {
    Log(&'p Path),
    Live,
}

/// Trains per the config and saves a checkpoint to `out` (and the loss trace
/// to `trace`, when given). `resume` continues a saved run on the same log.
pub fn train(run: &Run, source: TrainSource, resume: Option<&Path>, out: &Path, trace: Option<&Path>) -> Result<Checkpoint> {
    let c = &run.cfg.config;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.expect_variant(c.train.variant, &c.train.dims)?;
            Trainer::resume(c.train, ck.net, ck.target, ck.optimizer, ck.step)?
        }
        None => Trainer::new(c.train)?,
    };
    let (mut eval_env, eval_cfg) = c.eval_env(c.train.seed)?;
    let alpha = c.train.alpha;
    let mut evaluate = |net: &QNetwork| Ok(run_online_test(net, &mut eval_env, &eval_cfg, alpha)?.mean_reward);
    match source {
        TrainSource::Log(path) => {
            let log = read_log_file(path)?;
            trainer.train_on_log(&log, &mut evaluate)?;
        }
        TrainSource::Live => {
            if resume.is_some() {
                return Err(Error::Precondition("live training cannot resume from a checkpoint".into()));
            }
            let mut env = SessionEnv::new(c.env, c.train.dims.window)?;
            trainer.train_live(&mut env, &mut evaluate)?;
        }
    }
    let ck = Checkpoint::from_trainer(&trainer, &run.cfg.digest);
    ck.save(out)?;
    let mut extra = Vec::new();
    if let Some(t) = trace {
        let mut w = create(t)?;
        write_trace(trainer.trace(), &mut w).map_err(io_at(t))?;
        w.flush().map_err(io_at(t))?;
        extra.push(t);
    }
    run.finish(vec![c.train.seed], out, &extra)?;
    Ok(ck)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Greedy,
    UniformRandom,
    NeverAdvertise,
}

/// Rolls out a policy on the simulator and writes summary metrics to `out`.
pub fn evaluate(run: &Run, policy: EvalPolicy, checkpoint: Option<&Path>, episodes: Option<usize>, out: &Path) -> Result<EvalMetrics> {
    let c = &run.cfg.config;
    let mut env = SessionEnv::new(c.env, c.train.dims.window)?;
    let ecfg = EvalConfig {
        episodes: episodes.unwrap_or(c.eval.episodes),
        seed: c.eval.seed,
    };
    let alpha = c.train.alpha;
    let metrics = match policy {
        EvalPolicy::Greedy => {
            let path = checkpoint.ok_or_else(|| Error::Precondition("greedy evaluation needs a checkpoint".into()))?;
            let ck = Checkpoint::load(path)?;
            run_online_test(&ck.net, &mut env, &ecfg, alpha)?
        }
        EvalPolicy::UniformRandom => uniform_random(&mut env, &ecfg, alpha)?,
        EvalPolicy::NeverAdvertise => never_advertise(&mut env, &ecfg, alpha)?,
    };
    let mut w = create(out)?;
    w.write_all(metrics_toml(&metrics).as_bytes()).map_err(io_at(out))?;
    w.flush().map_err(io_at(out))?;
    run.finish(vec![ecfg.seed], out, &[])?;
    Ok(metrics)
}

/// Summary metrics as TOML (per-episode rows omitted).
pub fn metrics_toml(m: &EvalMetrics) -> String {
    format!(
        "alpha = {:?}\nepisodes = {}\nseed = {}\nmean_reward = {:?}\nstd_reward = {:?}\nmean_r_ad = {:?}\nstd_r_ad = {:?}\nmean_r_ex = {:?}\nstd_r_ex = {:?}\nmean_length = {:?}\ninsert_rate = {:?}\n",
        m.alpha, m.episodes, m.seed, m.mean_reward, m.std_reward, m.mean_r_ad, m.std_r_ad, m.mean_r_ex, m.std_r_ex, m.mean_length, m.insert_rate
    )
}

pub fn sweep(run: &Run, alphas: &[f64], out: &Path) -> Result<SweepReport> {
    let c = &run.cfg.config;
    let report = alpha_sweep(c, alphas, &mut |a, s, m| {
        log::info!("alpha {a} seed {s}: reward {:.4} r_ad {:.4} r_ex {:.4}", m.mean_reward, m.mean_r_ad, m.mean_r_ex);
    })?;
    let mut w = create(out)?;
    report.write_table(&mut w).map_err(io_at(out))?;
    w.flush().map_err(io_at(out))?;
    run.finish(c.seeds.clone(), out, &[])?;
    Ok(report)
}

pub fn ablate(run: &Run, out: &Path) -> Result<AblationReport> {
    let c = &run.cfg.config;
    let report = ablation_suite(c, &ABLATION_ARMS, &mut |arm, s, m| {
        log::info!("{} seed {s}: reward {:.4}", arm.name, m.mean_reward);
    })?;
    let mut w = create(out)?;
    report.write_table(&mut w).map_err(io_at(out))?;
    w.flush().map_err(io_at(out))?;
    run.finish(c.seeds.clone(), out, &[])?;
    Ok(report)
}

/// Finite-difference check of the configured variant and widths over
/// `seeds` random networks; writes the reports to `out`. Fails if any seed
/// exceeds the tolerance.
pub fn gradcheck(run: &Run, seeds: u64, check: CheckConfig, out: &Path) -> Result<Vec<GradCheckReport>> {
    let c = &run.cfg.config;
    let mut reports = Vec::new();
    let mut w = create(out)?;
    for seed in 0..seeds {
        let r = td_gradcheck(c.train.variant, c.train.dims, seed, 2, check)?;
        writeln!(w, "seed {seed}\n{r}\n").map_err(io_at(out))?;
        reports.push(r);
    }
    w.flush().map_err(io_at(out))?;
    run.finish((0..seeds).collect(), out, &[])?;
    let worst = reports.iter().map(GradCheckReport::max_rel_error).fold(0.0, f64::max);
    if reports.iter().any(|r| !r.passed()) {
        return Err(Error::Contract(format!(
            "gradient check failed: max relative error {worst:.3e} above {:.1e}",
            check.tolerance
        )));
    }
    Ok(reports)
}
