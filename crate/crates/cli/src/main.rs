use std::process::ExitCode;

use clap::{Parser, Subcommand};
use p2pl_bench::{cmd_bench, cmd_gradcheck, cmd_register, cmd_synth, config, Status};
use p2pl_bench::{BenchArgs, GradcheckArgs, RegisterArgs, SynthArgs};

#[derive(Parser)]
#[command(name = "p2pl", version, about = "Point-to-plane registration: synthesis, ICP, gradient checks, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate registration pairs.
    Synth(SynthArgs),
    /// Run ICP on pair directories and score the estimates.
    Register(RegisterArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Time and measure the forward and backward passes.
    Bench(BenchArgs),
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    config::init_threads()?;
    match cli.command {
        Command::Synth(args) => {
            let dirs = cmd_synth(&args)?;
            println!("wrote {} pairs to {}", dirs.len(), args.out.display());
        }
        Command::Register(args) => {
            let outcome = cmd_register(&args)?;
            let s = &outcome.summary;
            println!("registered {} pairs, {} failed", s.pairs, s.failed);
            if let Some(rot) = &s.rotation_deg {
                println!("rotation RMSE {:.6} deg, MAE {:.6} deg", rot.rmse, rot.mae);
            }
            if args.strict && outcome.failed() > 0 {
                return Ok(Status::ThresholdFailure);
            }
        }
        Command::Gradcheck(args) => {
            let outcome = cmd_gradcheck(&args)?;
            for s in &outcome.summary {
                println!("iters {:>3}: mean relMSE {:.3e}, max {:.3e}", s.n_iters, s.mean_rel_mse, s.max_rel_mse);
            }
        }
        Command::Bench(args) => {
            for r in cmd_bench(&args)? {
                println!(
                    "{:<18} iters {:>3}: {:>10.3} ms, {:>10} bytes",
                    serde_json::to_value(r.phase)?.as_str().unwrap_or_default(),
                    r.n_iters,
                    r.median_ms,
                    r.peak_alloc_bytes
                );
            }
        }
    }
    Ok(Status::Success)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::HardError as u8)
        }
    }
}
