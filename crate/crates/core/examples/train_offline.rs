//! Trains DEAR from a behavior-policy log, saves a checkpoint, reloads it and
//! runs the online test against the reference policies.
//!
//! cargo run --release --example train_offline -- [steps]

use dear::cli::Checkpoint;
use dear::eval::{never_advertise, run_online_test, uniform_random, ExperimentConfig};
use dear::trainer::{write_trace, Trainer};

fn main() -> dear::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let mut exp = ExperimentConfig::default();
    exp.train.steps = steps;
    exp.train.eval_every = steps / 5;
    exp.eval.episodes = 200;

    let log = exp.log_for(1)?;
    println!("log: {} sessions, {} decisions", log.sessions.len(), log.decision_count());
    let (mut env, ecfg) = exp.eval_env(1)?;
    let mut trainer = Trainer::new(exp.train)?;
    trainer.train_on_log(&log, &mut |net| Ok(run_online_test(net, &mut env, &ecfg, 1.0)?.mean_reward))?;
    for row in trainer.trace().iter().filter(|r| r.eval_reward.is_some()) {
        println!("step {:>6}  loss {:.4}  online reward {:.3}", row.step, row.loss, row.eval_reward.unwrap_or(f64::NAN));
    }

    let path = std::env::temp_dir().join("dear-offline.ckpt");
    Checkpoint::from_trainer(&trainer, "example").save(&path)?;
    let restored = Checkpoint::load(&path)?;
    let trace = std::env::temp_dir().join("dear-offline-trace.csv");
    let mut f = std::fs::File::create(&trace).map_err(|e| dear::Error::Data(e.to_string()))?;
    write_trace(trainer.trace(), &mut f).map_err(|e| dear::Error::Data(e.to_string()))?;

    let (mut env, ecfg) = exp.eval_env(1)?;
    let dear = run_online_test(&restored.net, &mut env, &ecfg, 1.0)?;
    let never = never_advertise(&mut env, &ecfg, 1.0)?;
    let random = uniform_random(&mut env, &ecfg, 1.0)?;
    for (name, m) in [("DEAR", &dear), ("never advertise", &never), ("uniform random", &random)] {
        println!(
            "{name:<16} reward {:.3}  r_ad {:.3}  r_ex {:.3}  insert rate {:.3}",
            m.mean_reward, m.mean_r_ad, m.mean_r_ex, m.insert_rate
        );
    }
    println!("checkpoint {}, trace {}", path.display(), trace.display());
    Ok(())
}
