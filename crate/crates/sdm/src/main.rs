use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdm::commands::{self, Arm, Context};
use sdm::config::parse_strategy;

#[derive(Parser, Debug)]
#[command(name = "sdm", version, about = "Margin-based active domain adaptation toolkit")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "sdm-out")]
    out: PathBuf,
    /// Write every wall time as 0 so that outputs are byte-reproducible.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the active learning loop once; writes rounds.csv and manifest.json.
    Simulate {
        /// Feature CSV to use instead of the configured dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run several strategies over several seeds; writes compare.csv,
    /// compare.md, paired.csv and runs.csv.
    Compare {
        /// Comma-separated `strategy[:loss]` list.
        #[arg(long, value_delimiter = ',', default_value = "random,margin,sdm_g")]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Comma-separated budget fractions; defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Check the post-step query identity, every gradient and the loss
    /// identities; writes verify.json. Exits non-zero on any violation.
    Verify {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Learning rate of the simulated step.
        #[arg(long, alias = "break-eta", default_value_t = 0.01, allow_negative_numbers = true)]
        eta: f64,
    },
    /// Time scoring and selection over a grid of pool sizes; writes bench.csv,
    /// bench_fit.json and bench.md.
    Bench {
        #[arg(long = "n", value_delimiter = ',', default_value = "1000,2000,4000,8000")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 31)]
        k: usize,
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long, default_value = "sdm_g")]
        strategy: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Write the dataset as feature CSV with a selected_round column.
    DumpFeatures {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to <out>/features.csv.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Sampling rounds to run before dumping.
        #[arg(long, default_value_t = 0)]
        rounds: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let ctx = Context {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
        timing: !cli.no_timing,
    };
    match cli.command {
        Command::Simulate { dataset } => {
            let out = commands::simulate(&ctx, dataset.as_deref())?;
            let last = out.metrics.last().expect("round 0 is always emitted");
            println!(
                "{} rounds, {} labeled, final accuracy {:.4}",
                out.metrics.len() - 1,
                last.labeled_target_count,
                last.target_test_accuracy
            );
            println!("wrote {} and {}", out.rounds_csv.display(), out.manifest.display());
            Ok(true)
        }
        Command::Compare { strategies, seeds, budgets } => {
            let arms = strategies
                .iter()
                .map(|s| Arm::parse(s))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let out = commands::compare(&ctx, &arms, seeds, budgets.as_deref())?;
            print!("{}", commands::compare_markdown(&out));
            Ok(true)
        }
        Command::Verify { trials, eta } => {
            let report = commands::verify(&ctx, trials, eta)?;
            println!(
                "closed form max error {:.3e}, {} monotonicity violations",
                report.prop1.max_closed_form_error, report.prop1.monotonicity_violations
            );
            for g in &report.gradients {
                println!(
                    "{:<26} {} ({} instances, max rel. error {:.3e})",
                    g.name,
                    if g.passed { "ok" } else { "FAILED" },
                    g.instances,
                    g.max_relative_error
                );
            }
            println!(
                "dynamic identity {:.3e}, selectivity {}, divergence monotonicity {}",
                report.dynamic_identity.max_abs_error,
                if report.selectivity.passed { "ok" } else { "FAILED" },
                if report.divergence_monotonicity.passed { "ok" } else { "FAILED" }
            );
            println!("{}", if report.passed { "all checks passed" } else { "VIOLATIONS FOUND" });
            Ok(report.passed)
        }
        Command::Bench { ns, k, d, strategy, repeats } => {
            let strategy = parse_strategy(&strategy)?;
            let out = commands::bench(&ctx, &ns, k, d, strategy, repeats)?;
            print!("{}", sdm::bench::bench_markdown(&out.rows, &out.fit));
            Ok(true)
        }
        Command::DumpFeatures { dataset, output, rounds } => {
            let output = output.unwrap_or_else(|| ctx.out.join("features.csv"));
            if let Some(dir) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                if output.starts_with(&ctx.out) {
                    std::fs::create_dir_all(dir)?;
                }
            }
            let selected = commands::dump_features(&ctx, dataset.as_deref(), &output, rounds)?;
            let flagged = selected.iter().filter(|r| **r >= 0).count();
            println!("wrote {} ({flagged} selected rows)", output.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
