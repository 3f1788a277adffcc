use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hslag::cli::{emit_plot_data, resolve_out_dir, run_suite, ExperimentConfig, Suite};

#[derive(Parser)]
#[command(name = "hslag", version, about = "Hamiltonian stationary Lagrangian experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides HSLAG_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stationarity, volume and α_H of the model Lagrangians.
    VerifyModels(RunArgs),
    /// Spectrum, kernel, stability and second variation of ℒ.
    Spectrum(RunArgs),
    /// Scaling of the rescaled chart metrics and the Moser normalization.
    Estimates(RunArgs),
    /// Gradient identity, frame optimization and second variation.
    Reduce(RunArgs),
    /// Projected solves over a list of t.
    Sweep(RunArgs),
    /// Rebuild plot_data.csv from the traces of a run directory.
    Plot { dir: PathBuf },
}

fn main() -> ExitCode {
    let (suite, args) = match Cli::parse().command {
        Command::VerifyModels(a) => (Suite::VerifyModels, a),
        Command::Spectrum(a) => (Suite::Spectrum, a),
        Command::Estimates(a) => (Suite::Estimates, a),
        Command::Reduce(a) => (Suite::Reduce, a),
        Command::Sweep(a) => (Suite::Sweep, a),
        Command::Plot { dir } => {
            return match emit_plot_data(&dir) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    let outcome = ExperimentConfig::load(&args.config).and_then(|cfg| {
        let out = resolve_out_dir(&cfg, suite, args.out.as_deref());
        run_suite(suite, &cfg, &out, args.seed)
    });
    match outcome {
        Ok(run) => {
            // A closed stdout must not change the exit status.
            let mut out = std::io::stdout().lock();
            for a in &run.manifest.assertions {
                let _ = writeln!(out, "{}", a.report_line());
            }
            if let Some(e) = &run.manifest.error {
                let _ = writeln!(out, "[FAIL] suite stopped: {e}");
            }
            let _ = writeln!(
                out,
                "{} {}: {}",
                suite,
                if run.passed() { "passed" } else { "failed" },
                run.dir.join("manifest.json").display()
            );
            ExitCode::from(run.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
