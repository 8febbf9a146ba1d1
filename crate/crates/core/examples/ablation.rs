//! Full model against its ablations on paired seeds, with paired t-tests.
//!
//! cargo run --release --example ablation -- [steps] [seeds]

use dear::eval::{ablation_suite, ExperimentConfig, ABLATION_ARMS};

fn main() -> dear::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut exp = ExperimentConfig::default();
    exp.train.steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    exp.seeds = (1..=seeds).collect();
    exp.eval.episodes = 300;
    let report = ablation_suite(&exp, &ABLATION_ARMS, &mut |arm, s, m| {
        eprintln!("{} seed {s}: reward {:.3}", arm.name, m.mean_reward)
    })?;
    report.write_table(&mut std::io::stdout()).map_err(|e| dear::Error::Data(e.to_string()))?;
    Ok(())
}
