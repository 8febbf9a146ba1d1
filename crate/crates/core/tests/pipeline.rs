//! Log generation through training and evaluation, at toy scale.

use dear::eval::{ablation_suite, alpha_sweep, run_online_test, ExperimentConfig, ABLATION_ARMS};
use dear::features::ModelDims;
use dear::sim::{generate_log, read_log, BehaviorPolicyConfig, EnvConfig, SessionEnv};
use dear::trainer::{LogTransitions, TrainConfig, Trainer};

fn small_dims() -> ModelDims {
    ModelDims {
        list_len: 6,
        history_hidden: 4,
        rec_width: 8,
        head_hidden: 8,
        window: 6,
    }
}

fn toy_experiment() -> ExperimentConfig {
    let mut exp = ExperimentConfig::default();
    exp.train.dims = small_dims();
    exp.train.steps = 40;
    exp.train.batch_size = 8;
    exp.log_sessions = 5;
    exp.eval.episodes = 3;
    exp.seeds = vec![1, 2];
    exp
}

#[test]
fn logged_sessions_become_transitions() {
    let mut env = SessionEnv::new(EnvConfig::default(), 6).unwrap();
    let mut buf = Vec::new();
    let summary = generate_log(&mut env, &BehaviorPolicyConfig::default(), 12, &mut buf).unwrap();
    let log = read_log(buf.as_slice()).unwrap();
    assert_eq!(log.sessions.len(), 12);
    assert_eq!(log.decision_count(), summary.decisions);

    let cfg = TrainConfig { dims: small_dims(), ..TrainConfig::default() };
    let stream = LogTransitions::new(&log, &cfg).unwrap();
    let mut serial = 0;
    let mut total = 0;
    for s in 0..stream.sessions() {
        let ts = stream.session(s, serial).unwrap();
        assert!(ts.last().unwrap().terminal);
        assert!(ts[..ts.len() - 1].iter().all(|t| !t.terminal && t.next_obs.is_some()));
        for (k, t) in ts.iter().enumerate() {
            assert_eq!(t.serial, serial + k as u64);
            assert_eq!(t.reward, t.r_ad + cfg.alpha * t.r_ex);
        }
        serial += ts.len() as u64;
        total += ts.len();
    }
    assert_eq!(total, summary.decisions);
}

#[test]
fn offline_training_then_online_test() {
    let exp = toy_experiment();
    let log = exp.log_for(1).unwrap();
    let mut trainer = Trainer::new(TrainConfig { eval_every: 20, ..exp.train }).unwrap();
    let mut evals = 0;
    trainer
        .train_on_log(&log, &mut |_| {
            evals += 1;
            Ok(0.0)
        })
        .unwrap();
    assert_eq!(trainer.step(), 40);
    assert_eq!(evals, 2);
    let (mut env, ecfg) = exp.eval_env(1).unwrap();
    let m = run_online_test(trainer.network(), &mut env, &ecfg, 1.0).unwrap();
    assert_eq!(m.episodes, 3);
    assert!(m.mean_reward.is_finite());
}

#[test]
fn live_training_is_deterministic() {
    let exp = toy_experiment();
    let run = || {
        let mut env = SessionEnv::new(exp.env, exp.train.dims.window).unwrap();
        let mut t = Trainer::new(exp.train).unwrap();
        t.train_live(&mut env, &mut |_| Ok(0.0)).unwrap();
        t.trace().iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 40);
    assert_eq!(a, run());
}

#[test]
fn sweep_and_ablation_run_end_to_end() {
    let exp = toy_experiment();
    let sweep = alpha_sweep(&exp, &[0.0, 1.0, 2.0], &mut |_, _, _| {}).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    assert!(sweep.rows.iter().all(|r| r.runs.len() == 2));
    let mut table = Vec::new();
    sweep.write_table(&mut table).unwrap();
    assert!(String::from_utf8(table).unwrap().lines().count() >= 4);

    let ablation = ablation_suite(&exp, &ABLATION_ARMS, &mut |_, _, _| {}).unwrap();
    assert_eq!(ablation.rows.len(), ABLATION_ARMS.len());
    assert!(ablation.row("DEAR").unwrap().vs_full.is_none());
    assert!(ablation.row("DEAR-4").unwrap().vs_full.is_some());
}
