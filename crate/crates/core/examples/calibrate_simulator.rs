//! Fits the simulator's base leave logit and revenue scale so that the
//! behavior policy reproduces the target session statistics.
//!
//! cargo run --release --example calibrate_simulator -- [sessions]

use dear::sim::{calibrate, BehaviorPolicyConfig, CalibrationTargets, EnvConfig};

fn main() -> dear::Result<()> {
    let sessions = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let targets = CalibrationTargets::default();
    let fit = calibrate(EnvConfig::default(), &BehaviorPolicyConfig::default(), &targets, sessions, 20)?;
    let s = fit.summary;
    println!("base_logit     {:.4}", fit.base_logit);
    println!("revenue_scale  {:.4}", fit.revenue_scale);
    println!("session videos {:.2} (target {:.2})", s.mean_session_videos(), targets.session_videos);
    println!("session revenue {:.4} (target {:.3})", s.mean_session_revenue(), targets.session_revenue);
    println!("insert rate    {:.4} (target {:.4})", s.insert_rate(), targets.insert_rate);
    Ok(())
}
