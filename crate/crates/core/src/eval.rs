//! Greedy online evaluation, reference policies, the alpha sweep and the
//! ablation suite.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::qnet::{AdAction, QNetwork, Variant};
use crate::sim::log::SessionLog;
use crate::sim::{generate_log, read_log, session_seed, BehaviorPolicyConfig, DecisionPoint, EnvConfig, Environment, SessionEnv};
use crate::trainer::{combine_reward, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 500, seed: 2024 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeResult {
    pub reward: f64,
    pub r_ad: f64,
    pub r_ex: f64,
    pub decisions: usize,
    pub ads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub alpha: f64,
    pub episodes: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_r_ad: f64,
    pub std_r_ad: f64,
    pub mean_r_ex: f64,
    pub std_r_ex: f64,
    /// Decisions per session.
    pub mean_length: f64,
    pub insert_rate: f64,
    pub per_episode: Vec<EpisodeResult>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl EvalMetrics {
    fn from_episodes(alpha: f64, seed: u64, per_episode: Vec<EpisodeResult>) -> Self {
        let (mean_reward, std_reward) = mean_std(per_episode.iter().map(|e| e.reward));
        let (mean_r_ad, std_r_ad) = mean_std(per_episode.iter().map(|e| e.r_ad));
        let (mean_r_ex, std_r_ex) = mean_std(per_episode.iter().map(|e| e.r_ex));
        let decisions: usize = per_episode.iter().map(|e| e.decisions).sum();
        let ads: usize = per_episode.iter().map(|e| e.ads).sum();
        Self {
            alpha,
            episodes: per_episode.len(),
            seed,
            mean_reward,
            std_reward,
            mean_r_ad,
            std_r_ad,
            mean_r_ex,
            std_r_ex,
            mean_length: decisions as f64 / per_episode.len().max(1) as f64,
            insert_rate: ads as f64 / decisions.max(1) as f64,
            per_episode,
        }
    }
}

/// Runs `episodes` sessions with episode `i` seeded from `(cfg.seed, i)`.
/// The policy gets a per-episode RNG for any randomization it needs.
pub fn run_policy<E: Environment>(
    env: &mut E,
    cfg: &EvalConfig,
    alpha: f64,
    policy: &mut dyn FnMut(&DecisionPoint, &mut ChaCha8Rng) -> Result<AdAction>,
) -> Result<EvalMetrics> {
    let mut results = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes as u64 {
        let mut point = env.reset(session_seed(cfg.seed, i))?.first;
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed(cfg.seed ^ 0x9e37, i));
        let mut ep = EpisodeResult::default();
        loop {
            let action = policy(&point, &mut rng)?;
            if let Some(c) = action.candidate {
                if c >= point.candidates.len() {
                    return Err(Error::Contract(format!("policy chose candidate {c} outside the offered set")));
                }
            }
            let out = env.step(&action)?;
            ep.reward += combine_reward(out.r_ad, out.r_ex, alpha);
            ep.r_ad += out.r_ad;
            ep.r_ex += out.r_ex;
            ep.decisions += 1;
            ep.ads += usize::from(!action.is_no_ad());
            match out.next {
                Some(n) => point = n,
                None => break,
            }
        }
        results.push(ep);
    }
    Ok(EvalMetrics::from_episodes(alpha, cfg.seed, results))
}

/// Greedy rollout of `net`, no exploration.
pub fn run_online_test<E: Environment>(net: &QNetwork, env: &mut E, cfg: &EvalConfig, alpha: f64) -> Result<EvalMetrics> {
    run_policy(env, cfg, alpha, &mut |p, _| {
        Ok(net.greedy_action(&p.observation, &p.candidate_vectors())?.action)
    })
}

/// Reference that never shows an ad.
pub fn never_advertise<E: Environment>(env: &mut E, cfg: &EvalConfig, alpha: f64) -> Result<EvalMetrics> {
    run_policy(env, cfg, alpha, &mut |_, _| Ok(AdAction::no_ad()))
}

/// Reference that draws the location uniformly over `0..=L+1` and, when
/// inserting, a uniformly random candidate.
pub fn uniform_random<E: Environment>(env: &mut E, cfg: &EvalConfig, alpha: f64) -> Result<EvalMetrics> {
    let l = env.list_len();
    run_policy(env, cfg, alpha, &mut |p, rng| {
        let loc = rng.random_range(0..=l + 1);
        if loc == 0 {
            return Ok(AdAction::no_ad());
        }
        let i = rng.random_range(0..p.candidates.len());
        Ok(AdAction::insert(p.candidates[i].vector(), i, loc))
    })
}

/// Everything needed to train and evaluate one model per seed on the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub behavior: BehaviorPolicyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Logged sessions generated per seed.
    pub log_sessions: u64,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            behavior: BehaviorPolicyConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            log_sessions: 4_000,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    fn env_for(&self, seed: u64) -> EnvConfig {
        let mut e = self.env;
        e.seed = session_seed(self.env.seed, seed);
        e
    }

    /// Behavior log of one seed; shared by every run on that seed.
    pub fn log_for(&self, seed: u64) -> Result<SessionLog> {
        let mut env = SessionEnv::new(self.env_for(seed), self.train.dims.window)?;
        let mut behavior = self.behavior;
        behavior.seed = session_seed(self.behavior.seed, seed);
        let mut buf = Vec::new();
        generate_log(&mut env, &behavior, self.log_sessions, &mut buf)?;
        read_log(buf.as_slice())
    }

    /// Evaluation environment and episode seeds of one seed; distinct from the log's.
    pub fn eval_env(&self, seed: u64) -> Result<(SessionEnv, EvalConfig)> {
        let env = SessionEnv::new(self.env, self.train.dims.window)?;
        let cfg = EvalConfig {
            episodes: self.eval.episodes,
            seed: session_seed(self.eval.seed, seed),
        };
        Ok((env, cfg))
    }
}

/// Trains on the seed's log with `train` (its seed replaced) and evaluates greedily.
pub fn train_and_evaluate(
    exp: &ExperimentConfig,
    log: &SessionLog,
    train: TrainConfig,
    seed: u64,
) -> Result<(QNetwork, EvalMetrics)> {
    let mut cfg = train;
    cfg.seed = seed;
    let mut trainer = Trainer::new(cfg)?;
    trainer.train_on_log(log, &mut |_| Ok(f64::NAN))?;
    let net = trainer.into_network();
    let (mut env, ecfg) = exp.eval_env(seed)?;
    let metrics = run_online_test(&net, &mut env, &ecfg, exp.train.alpha)?;
    Ok((net, metrics))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(rx.iter().copied());
    let (my, _) = mean_std(ry.iter().copied());
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    /// One entry per seed.
    pub runs: Vec<EvalMetrics>,
    pub mean_r_ad: f64,
    pub mean_r_ex: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn spearman_r_ex(&self) -> f64 {
        let a: Vec<f64> = self.rows.iter().map(|r| r.alpha).collect();
        let e: Vec<f64> = self.rows.iter().map(|r| r.mean_r_ex).collect();
        spearman(&a, &e)
    }

    pub fn spearman_r_ad(&self) -> f64 {
        let a: Vec<f64> = self.rows.iter().map(|r| r.alpha).collect();
        let d: Vec<f64> = self.rows.iter().map(|r| r.mean_r_ad).collect();
        spearman(&a, &d)
    }

    pub fn write_table<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "alpha\tseeds\tmean_r_ad\tmean_r_ex\tmean_reward")?;
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                r.alpha,
                r.runs.len(),
                r.mean_r_ad,
                r.mean_r_ex,
                r.mean_reward
            )?;
        }
        Ok(())
    }
}

/// One model per (alpha, seed); each seed's log is shared across alphas.
/// `progress` is called after every finished run.
pub fn alpha_sweep(
    exp: &ExperimentConfig,
    alphas: &[f64],
    progress: &mut dyn FnMut(f64, u64, &EvalMetrics),
) -> Result<SweepReport> {
    if alphas.len() < 3 {
        return Err(Error::Precondition("alpha sweep needs at least three alpha values".into()));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Precondition("alpha values must be finite and non-negative".into()));
    }
    let mut runs: Vec<Vec<EvalMetrics>> = vec![Vec::new(); alphas.len()];
    for &seed in &exp.seeds {
        let log = exp.log_for(seed)?;
        for (k, &alpha) in alphas.iter().enumerate() {
            let mut e = exp.clone();
            e.train.alpha = alpha;
            let (_, m) = train_and_evaluate(&e, &log, e.train, seed)?;
            progress(alpha, seed, &m);
            runs[k].push(m);
        }
    }
    let rows = alphas
        .iter()
        .zip(runs)
        .map(|(&alpha, runs)| {
            let n = runs.len().max(1) as f64;
            SweepRow {
                alpha,
                mean_r_ad: runs.iter().map(|m| m.mean_r_ad).sum::<f64>() / n,
                mean_r_ex: runs.iter().map(|m| m.mean_r_ex).sum::<f64>() / n,
                mean_reward: runs.iter().map(|m| m.mean_reward).sum::<f64>() / n,
                runs,
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

/// A model configuration in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationArm {
    pub name: &'static str,
    pub variant: Variant,
    /// Overrides the discount; `Some(0.0)` turns training into immediate-reward regression.
    pub gamma: Option<f64>,
}

/// Full model, then the four single-component removals.
pub const ABLATION_ARMS: [AblationArm; 5] = [
    AblationArm { name: "DEAR", variant: Variant::Dear, gamma: None },
    AblationArm { name: "DEAR-1", variant: Variant::Dear, gamma: Some(0.0) },
    AblationArm { name: "DEAR-2", variant: Variant::FcnEncoder, gamma: None },
    AblationArm { name: "DEAR-3", variant: Variant::ArchBOneHotLoc, gamma: None },
    AblationArm { name: "DEAR-4", variant: Variant::NoDueling, gamma: None },
];

/// Two-sided paired t-test; `(t, p)`. `p` is 1 when the differences are all equal.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    if n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let (m, s) = mean_std(d.iter().copied());
    if s == 0.0 {
        return if m == 0.0 { (0.0, 1.0) } else { (m.signum() * f64::INFINITY, 0.0) };
    }
    let t = m / (s / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    (t, 2.0 * (1.0 - dist.cdf(t.abs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub runs: Vec<EvalMetrics>,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Paired against the full model's seeds; `None` on the full model's row.
    pub vs_full: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.arm.name == name)
    }

    pub fn write_table<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "model\tvariant\tgamma\tseeds\tepisodes\tmean_reward\tstd_reward\tt_vs_full\tp_vs_full")?;
        for r in &self.rows {
            let gamma = r.arm.gamma.map_or("default".to_string(), |g| g.to_string());
            let (t, p) = r.vs_full.map_or(("-".to_string(), "-".to_string()), |(t, p)| (format!("{t:.4}"), format!("{p:.4}")));
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                r.arm.name,
                r.arm.variant,
                gamma,
                r.runs.len(),
                r.runs.first().map_or(0, |m| m.episodes),
                r.mean_reward,
                r.std_reward,
                t,
                p
            )?;
        }
        Ok(())
    }
}

/// Trains every arm on the same per-seed logs and evaluation episodes.
pub fn ablation_suite(
    exp: &ExperimentConfig,
    arms: &[AblationArm],
    progress: &mut dyn FnMut(&AblationArm, u64, &EvalMetrics),
) -> Result<AblationReport> {
    let mut runs: Vec<Vec<EvalMetrics>> = vec![Vec::new(); arms.len()];
    for &seed in &exp.seeds {
        let log = exp.log_for(seed)?;
        for (k, arm) in arms.iter().enumerate() {
            let mut train = exp.train;
            train.variant = arm.variant;
            if let Some(g) = arm.gamma {
                train.gamma = g;
            }
            let (_, m) = train_and_evaluate(exp, &log, train, seed)?;
            progress(arm, seed, &m);
            runs[k].push(m);
        }
    }
    let full: Vec<f64> = runs.first().map(|r| r.iter().map(|m| m.mean_reward).collect()).unwrap_or_default();
    let rows = arms
        .iter()
        .zip(runs)
        .enumerate()
        .map(|(k, (arm, runs))| {
            let means: Vec<f64> = runs.iter().map(|m| m.mean_reward).collect();
            let (mean_reward, std_reward) = mean_std(means.iter().copied());
            AblationRow {
                arm: *arm,
                mean_reward,
                std_reward,
                vs_full: (k > 0).then(|| paired_t_test(&full, &means)),
                runs,
            }
        })
        .collect();
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_oracle() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // one adjacent swap among five: 1 - 6*2/(5*24) = 0.9
        assert!((spearman(&[0., 1., 2., 3., 4.], &[1., 2., 4., 3., 5.]) - 0.9).abs() < 1e-12);
        // ties get average ranks
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]);
        assert!((r - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn paired_t_matches_hand_computation() {
        let a = [3.0, 5.0, 4.0, 6.0];
        let b = [2.0, 3.0, 3.5, 4.0];
        // d = [1, 2, 0.5, 2]; mean 1.375, sd 0.75
        let (t, p) = paired_t_test(&a, &b);
        assert!((t - 1.375 / (0.75 / 2.0)).abs() < 1e-12);
        assert!(p > 0.03 && p < 0.04, "p = {p}");
    }

    #[test]
    fn never_advertise_earns_nothing_and_rewards_add_up() {
        let mut env = SessionEnv::new(EnvConfig::default(), 20).unwrap();
        let cfg = EvalConfig { episodes: 50, seed: 3 };
        let m = never_advertise(&mut env, &cfg, 1.5).unwrap();
        assert_eq!(m.mean_r_ad, 0.0);
        assert_eq!(m.insert_rate, 0.0);
        let r = uniform_random(&mut env, &cfg, 1.5).unwrap();
        for e in &r.per_episode {
            assert!((e.reward - (e.r_ad + 1.5 * e.r_ex)).abs() < 1e-9);
        }
        assert!(r.insert_rate > 0.7);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(Variant::Dear, crate::features::ModelDims::eighth(), false, &mut rng);
        let cfg = EvalConfig { episodes: 1, seed: 9 };
        let mut e1 = SessionEnv::new(EnvConfig::default(), 20).unwrap();
        let mut e2 = SessionEnv::new(EnvConfig::default(), 20).unwrap();
        let a = run_online_test(&net, &mut e1, &cfg, 1.0).unwrap();
        let b = run_online_test(&net, &mut e2, &cfg, 1.0).unwrap();
        assert_eq!(a.per_episode, b.per_episode);
        assert_eq!(a.mean_reward.to_bits(), b.mean_reward.to_bits());
    }

    #[test]
    fn sweep_needs_three_alphas() {
        let exp = ExperimentConfig::default();
        assert!(alpha_sweep(&exp, &[0.0, 1.0], &mut |_, _, _| {}).is_err());
    }
}
