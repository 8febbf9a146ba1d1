//! Trains against the live simulator with annealed epsilon-greedy
//! exploration, then evaluates greedily.
//!
//! cargo run --release --example online_test -- [steps]

use dear::eval::{never_advertise, run_online_test, EvalConfig};
use dear::sim::{EnvConfig, SessionEnv};
use dear::trainer::{TrainConfig, Trainer};

fn main() -> dear::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let mut env = SessionEnv::new(EnvConfig::default(), cfg.dims.window)?;
    let mut trainer = Trainer::new(cfg)?;
    trainer.train_live(&mut env, &mut |_| Ok(f64::NAN))?;
    println!("final exploration rate {:.2}", trainer.live_epsilon());

    let ecfg = EvalConfig { episodes: 300, seed: 99 };
    let greedy = run_online_test(trainer.network(), &mut env, &ecfg, cfg.alpha)?;
    let never = never_advertise(&mut env, &ecfg, cfg.alpha)?;
    println!(
        "greedy: reward {:.3} ± {:.3}, {:.1} decisions/session, insert rate {:.3}",
        greedy.mean_reward, greedy.std_reward, greedy.mean_length, greedy.insert_rate
    );
    println!("never advertise: reward {:.3}", never.mean_reward);
    Ok(())
}
