//! Parses an experiment config with an environment override, then saves and
//! restores a checkpoint and compares Q-values.
//!
//! cargo run --release --example config_and_checkpoint

use dear::cli::{parse_config, Checkpoint};
use dear::features::{random_item, random_observation, ItemKind};
use dear::trainer::Trainer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIG: &str = r#"
log_sessions = 2000

[train]
variant = "dear"
gamma = 0.9
adam.learning_rate = 5e-5

[env.user]
fatigue_weight = 0.4
"#;

fn main() -> dear::Result<()> {
    let overrides = vec![("DEAR_TRAIN__SEED".to_string(), "17".to_string())];
    let loaded = parse_config(CONFIG, &overrides)?;
    println!("digest {}", loaded.digest);
    println!("{} keys defaulted, overrides {:?}", loaded.defaulted.len(), loaded.overridden);
    println!("train.seed = {}, train.gamma = {}", loaded.config.train.seed, loaded.config.train.gamma);

    match parse_config("[train]\ngamma = 1.5\n", &[]) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }

    let trainer = Trainer::new(loaded.config.train)?;
    let bytes = Checkpoint::from_trainer(&trainer, &loaded.digest).to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let obs = random_observation(&mut rng, 6, 10, 3);
        let ad = random_item(ItemKind::Ad, &mut rng).vector();
        let a = trainer.network().greedy_action(&obs, std::slice::from_ref(&ad))?.q;
        let b = back.net.greedy_action(&obs, &[ad])?.q;
        worst = worst.max((a - b).abs());
    }
    println!("checkpoint {} bytes, max |ΔQ| over 100 probes {worst:e}", bytes.len());
    match Checkpoint::from_bytes(&bytes[..bytes.len() / 2]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly loaded"),
    }
    Ok(())
}
