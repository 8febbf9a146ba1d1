use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use dear::cli::commands::{self, EXIT_OK, EXIT_USAGE};
use dear::cli::{exit_code, load_config, EvalPolicy, Run, TrainSource};
use dear::nn::CheckConfig;

/// Deep Q-network ad interpolation: data generation, training, evaluation.
#[derive(Parser)]
#[command(name = "dear", version)]
struct Cli {
    /// TOML config; defaults apply when omitted. `DEAR_SECTION__KEY`
    /// environment variables override individual keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Greedy,
    Random,
    Never,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate behavior-policy sessions into a session log.
    GenData {
        #[arg(long)]
        sessions: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a Q-network from a session log or against the live simulator.
    #[command(group(ArgGroup::new("source").required(true).args(["log", "live"])))]
    Train {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, conflicts_with = "resume")]
        live: bool,
        /// Continue a saved run on the same log.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// CSV of per-step loss (and periodic evaluation reward).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Roll out a policy in the simulator and report rewards.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "greedy")]
        policy: Policy,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate over several alpha values and seeds.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4")]
        alphas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every ablation arm on paired seeds.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the TD-loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli, args: Vec<String>) -> dear::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData { sessions, out } => {
            let s = commands::gen_data(&Run::new("gen-data", args, &cfg), sessions, &out)?;
            println!(
                "wrote {} sessions: {} decisions, {:.2} videos/session, insert rate {:.4}, revenue/session {:.4}",
                s.sessions,
                s.decisions,
                s.mean_session_videos(),
                s.insert_rate(),
                s.mean_session_revenue()
            );
        }
        Command::Train { log, live, resume, out, trace } => {
            let source = match (&log, live) {
                (Some(p), false) => TrainSource::Log(p),
                _ => TrainSource::Live,
            };
            let ck = commands::train(&Run::new("train", args, &cfg), source, resume.as_deref(), &out, trace.as_deref())?;
            println!("trained {} to step {}; checkpoint {}", ck.variant, ck.step, out.display());
        }
        Command::Evaluate { checkpoint, policy, episodes, out } => {
            let policy = match policy {
                Policy::Greedy => EvalPolicy::Greedy,
                Policy::Random => EvalPolicy::UniformRandom,
                Policy::Never => EvalPolicy::NeverAdvertise,
            };
            let m = commands::evaluate(&Run::new("evaluate", args, &cfg), policy, checkpoint.as_deref(), episodes, &out)?;
            print!("{}", commands::metrics_toml(&m));
        }
        Command::Sweep { alphas, out } => {
            let r = commands::sweep(&Run::new("sweep", args, &cfg), &alphas, &out)?;
            r.write_table(&mut std::io::stdout()).map_err(|e| dear::Error::Data(e.to_string()))?;
        }
        Command::Ablate { out } => {
            let r = commands::ablate(&Run::new("ablate", args, &cfg), &out)?;
            r.write_table(&mut std::io::stdout()).map_err(|e| dear::Error::Data(e.to_string()))?;
        }
        Command::Gradcheck { seeds, step, tolerance, out } => {
            let check = CheckConfig {
                step,
                tolerance,
                ..CheckConfig::default()
            };
            let reports = commands::gradcheck(&Run::new("gradcheck", args, &cfg), seeds, check, &out)?;
            let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
            println!("PASS: {seeds} seeds, max relative error {worst:.3e} (tolerance {tolerance:.1e})");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return ExitCode::from(EXIT_OK as u8);
            }
            eprint!("{e}");
            eprintln!("error code={EXIT_USAGE} kind=usage message={:?}", e.kind().to_string());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", commands::error_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
