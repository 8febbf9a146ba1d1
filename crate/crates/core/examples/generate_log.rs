//! Simulates behavior-policy sessions, writes them as a session log and
//! reads the file back.
//!
//! cargo run --release --example generate_log -- [sessions] [path]

use std::io::Write;

use dear::sim::{generate_log, read_log_file, BehaviorPolicyConfig, EnvConfig, SessionEnv};

fn main() -> dear::Result<()> {
    let mut args = std::env::args().skip(1);
    let sessions: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("dear-sessions.log").display().to_string());

    let mut env = SessionEnv::new(EnvConfig::default(), 20)?;
    let file = std::fs::File::create(&path).map_err(|e| dear::Error::Data(e.to_string()))?;
    let mut out = std::io::BufWriter::new(file);
    let s = generate_log(&mut env, &BehaviorPolicyConfig::default(), sessions, &mut out)?;
    out.flush().map_err(|e| dear::Error::Data(e.to_string()))?;
    println!(
        "{} sessions, {} decisions, {:.2} videos/session, insert rate {:.4}, revenue/session {:.4}",
        s.sessions,
        s.decisions,
        s.mean_session_videos(),
        s.insert_rate(),
        s.mean_session_revenue()
    );

    let log = read_log_file(path.as_ref())?;
    let first = &log.sessions[0].requests;
    println!("wrote {path}: header `{}`", log.header.render());
    println!("session 0 has {} requests; first decision row:", first.len());
    println!("  {}", dear::sim::log::render_row(0, &first[log.header.warmup]));
    Ok(())
}
