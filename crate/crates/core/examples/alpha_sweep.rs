//! Trade-off between ad revenue and user experience as alpha grows.
//!
//! cargo run --release --example alpha_sweep -- [steps] [seeds]

use dear::eval::{alpha_sweep, ExperimentConfig};

fn main() -> dear::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut exp = ExperimentConfig::default();
    exp.train.steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    exp.seeds = (1..=seeds).collect();
    exp.eval.episodes = 300;
    let report = alpha_sweep(&exp, &[0.0, 0.5, 1.0, 2.0, 4.0], &mut |a, s, m| {
        eprintln!("alpha {a} seed {s}: r_ad {:.3} r_ex {:.3}", m.mean_r_ad, m.mean_r_ex)
    })?;
    report.write_table(&mut std::io::stdout()).map_err(|e| dear::Error::Data(e.to_string()))?;
    Ok(())
}
