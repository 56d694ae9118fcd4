use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mpg_cli::config::ExperimentConfig;
use mpg_cli::emit::{
    bounds_csv, certification_csv, write_run_outputs, OutputFormat,
};
use mpg_cli::runner::{bounds_tables, certify, run_experiment, scaling_summary_with_nu, Overrides};

/// Exact tabular experiments for Markov potential games.
#[derive(Parser)]
#[command(name = "mpg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's epsilon target.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Skip the potential deviation-identity check.
    #[arg(long)]
    trust_mpg: bool,
    /// Output format for per-cell artifacts.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format {other:?} (expected csv or json)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell for the configured game.
    Run(CommonFlags),
    /// Run the player-count sweep and emit the scaling summary.
    Sweep(CommonFlags),
    /// Run the oracle certification suite only.
    Certify(CommonFlags),
    /// Emit closed-form bound tables without running any dynamics.
    Bounds(CommonFlags),
}

fn load_config(flags: &CommonFlags) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&flags.config)
        .with_context(|| format!("reading config {}", flags.config.display()))?;
    ExperimentConfig::from_json(&text)
}

fn overrides(flags: &CommonFlags) -> Overrides {
    Overrides {
        seed: flags.seed,
        epsilon: flags.epsilon,
        trust_mpg: flags.trust_mpg,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(flags) => {
            let config = load_config(&flags)?;
            let artifacts = run_experiment(&config, &overrides(&flags), false)?;
            write_run_outputs(&flags.out, &artifacts, None, flags.format)?;
            for a in &artifacts {
                println!(
                    "{}: T={} nash_regret={:.6e} iters_to_eps={}",
                    a.label,
                    a.iterations_run,
                    a.nash_regret,
                    a.iterations_to_epsilon
                        .map(|t| t.to_string())
                        .unwrap_or_else(|| "inf".into()),
                );
            }
            println!("wrote {} cells to {}", artifacts.len(), flags.out.display());
            Ok(true)
        }
        Command::Sweep(flags) => {
            let config = load_config(&flags)?;
            let ov = overrides(&flags);
            let artifacts = run_experiment(&config, &ov, true)?;
            let eps = ov.epsilon.unwrap_or(config.epsilon);
            let scaling = scaling_summary_with_nu(&artifacts, eps, config.nu)?;
            write_run_outputs(&flags.out, &artifacts, Some(&scaling), flags.format)?;
            for row in &scaling {
                println!(
                    "N={:<3} {:<10} median_iters_to_eps={} bound={:.3e}",
                    row.num_players,
                    row.algorithm,
                    row.median_iterations_to_epsilon
                        .map(|t| format!("{t}"))
                        .unwrap_or_else(|| "inf".into()),
                    row.median_theorem_iteration_bound,
                );
            }
            println!("wrote {} cells to {}", artifacts.len(), flags.out.display());
            Ok(true)
        }
        Command::Certify(flags) => {
            let config = load_config(&flags)?;
            let reports = certify(&config, &overrides(&flags))?;
            std::fs::create_dir_all(&flags.out)?;
            std::fs::write(flags.out.join("certification.csv"), certification_csv(&reports))?;
            let mut all_pass = true;
            for r in &reports {
                println!(
                    "{} [{}]: built={:.6e} oracle={:.6e} err={:.3e} tol={:.3e} {}",
                    r.oracle,
                    r.instance,
                    r.built_value,
                    r.oracle_value,
                    r.abs_error,
                    r.tolerance,
                    if r.pass { "PASS" } else { "FAIL" },
                );
                all_pass &= r.pass;
            }
            Ok(all_pass)
        }
        Command::Bounds(flags) => {
            let config = load_config(&flags)?;
            let rows = bounds_tables(&config, &overrides(&flags))?;
            std::fs::create_dir_all(&flags.out)?;
            std::fs::write(flags.out.join("bounds.csv"), bounds_csv(&rows))?;
            for r in &rows {
                println!(
                    "N={:<3} {:<10} eta={:.4e} regret_bound(T={})={:.4e} iters({:.2e})={:.4e}",
                    r.num_players,
                    r.algorithm,
                    r.theorem_step_size,
                    r.horizon_t,
                    r.regret_bound_at_t,
                    r.epsilon,
                    r.iterations_for_epsilon,
                );
            }
            Ok(true)
        }
    }
}
