use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnnopt::cli::{cmd_compare, cmd_run, cmd_sensitivity, Overrides, RunConfig};
use dnnopt::cli::report::Summary;

#[derive(Parser)]
#[command(version, about = "Actor-critic surrogate optimizer for constrained black-box problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Replace the configured seeds (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Replace the configured evaluation budget.
    #[arg(long, global = true)]
    budget_override: Option<usize>,
    /// Replace the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One run per seed with the configured algorithm.
    Run { config: PathBuf },
    /// Screen variables by finite-difference sensitivity.
    Sensitivity {
        config: PathBuf,
        /// Optimize over the retained variables afterwards.
        #[arg(long)]
        then_run: bool,
    },
    /// Run every listed algorithm and write mean FoM curves.
    Compare { config: PathBuf },
}

fn print_summary(s: &Summary) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
    let idx = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    println!(
        "{}: success {} | first feasible min/max/mean {}/{}/{} | best objective min/max/mean {}/{}/{}",
        s.algorithm,
        s.success_rate,
        idx(s.first_feasible.min),
        idx(s.first_feasible.max),
        idx(s.first_feasible.mean),
        fmt(s.best_objective.min),
        fmt(s.best_objective.max),
        fmt(s.best_objective.mean),
    );
}

fn execute(cli: Cli) -> dnnopt::Result<()> {
    let overrides = Overrides {
        seeds: cli.seed_override,
        budget: cli.budget_override,
        output_dir: cli.output_dir,
    };
    let load = |p: &PathBuf| RunConfig::load(p)?.apply(&overrides);
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config)?;
            print_summary(&cmd_run(&cfg)?);
        }
        Command::Sensitivity { config, then_run } => {
            let cfg = load(config)?;
            let (report, summary) = cmd_sensitivity(&cfg, *then_run)?;
            let names: Vec<&str> = report.active_set.iter().map(|&j| report.variables[j].as_str()).collect();
            println!("active variables ({}/{}): {}", names.len(), report.variables.len(), names.join(", "));
            if let Some(s) = summary {
                print_summary(&s);
            }
        }
        Command::Compare { config } => {
            let cfg = load(config)?;
            let (_, summaries) = cmd_compare(&cfg)?;
            summaries.iter().for_each(print_summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
