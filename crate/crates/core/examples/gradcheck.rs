//! Finite-difference check of the TD-loss gradient for every network variant.
//!
//! cargo run --release --example gradcheck -- [seeds]

use dear::features::ModelDims;
use dear::nn::CheckConfig;
use dear::qnet::Variant;
use dear::trainer::td_gradcheck;

fn main() -> dear::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for variant in Variant::ALL {
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for seed in 0..seeds {
            let r = td_gradcheck(variant, ModelDims::eighth(), seed, 2, CheckConfig::default())?;
            worst = worst.max(r.max_rel_error());
            skipped += r.total_skipped();
        }
        let status = if worst <= 1e-4 { "ok" } else { "FAIL" };
        println!("{status:4} {:<18} max relative error {worst:.2e}, {skipped} kink-straddling entries skipped", variant.name());
    }
    Ok(())
}
