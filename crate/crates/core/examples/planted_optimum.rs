//! Off-policy training on a log where one (ad, location) pair always pays 1
//! and everything else 0; the greedy policy should find that pair.
//!
//! cargo run --release --example planted_optimum -- [steps]

use dear::sim::{planted_hit_rate, planted_log, PlantedConfig};
use dear::trainer::{TrainConfig, Trainer};

fn main() -> dear::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let pc = PlantedConfig::default();
    let log = planted_log(pc, 2_000, 1)?;
    let mut trainer = Trainer::new(TrainConfig { steps, ..TrainConfig::default() })?;
    let before = planted_hit_rate(trainer.network(), pc, 300, 77)?;
    let mut checkpoints = Vec::new();
    trainer.train_on_log(&log, &mut |_| Ok(f64::NAN))?;
    for row in trainer.trace().iter().filter(|r| r.step % 1_000 == 0) {
        checkpoints.push(format!("step {:>5}: loss {:.5}", row.step, row.loss));
    }
    println!("{}", checkpoints.join("\n"));
    let after = planted_hit_rate(trainer.network(), pc, 300, 77)?;
    println!("planted action chosen: {:.1}% before training, {:.1}% after {steps} steps", 100.0 * before, 100.0 * after);
    Ok(())
}
