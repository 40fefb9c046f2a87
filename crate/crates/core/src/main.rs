//! Command-line front end: `run` one configured experiment, `sweep` an
//! appendix suite, or `plot` result CSVs as SVG curves.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attentive_gp::harness::{
    plot_metric_svg, read_curves_csv, run_ablation_suite, run_experiment, run_overfitting_suite,
    run_sensitivity_suite, summarize, write_curves_csv, write_summary_csv, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "akgp", version, about = "Attentive-kernel GP regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file, with optional overrides.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Kernel override: rbf | ak | ak-weight | ak-mask | ak-nnx2 | gibbs | dkl
        #[arg(long)]
        kernel: Option<String>,
        /// Strategy override: random | active | myopic
        #[arg(long)]
        strategy: Option<String>,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the analysis suites from a base config.
    Sweep {
        /// sensitivity | ablation | overfitting
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optimizer iterations for the overfitting suite.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
    },
    /// Render SMSE/MSLL curve plots for every curves CSV in a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} run(s) failed; see diagnostics above");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<usize, Box<dyn std::error::Error>> {
    match Cli::parse().command {
        Command::Run { config, kernel, strategy, seed, n_max, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(kernel) = kernel {
                cfg.set("kernel", &kernel)?;
            }
            if let Some(strategy) = strategy {
                cfg.set("strategy", &strategy)?;
            }
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(n_max) = n_max {
                cfg.n_max = n_max;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            cfg.validate()?;

            let outcomes = run_experiment(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let tag = cfg.run_tag();
            let curves = cfg.out_dir.join(format!("{tag}.csv"));
            write_curves_csv(&curves, &outcomes)?;
            if let Some(summary) = summarize(&tag, &outcomes) {
                write_summary_csv(&cfg.out_dir.join(format!("{tag}_summary.csv")), &[summary])?;
            }

            let mut failures = 0;
            for o in &outcomes {
                match &o.error {
                    None => {
                        let last = o.records.last();
                        println!(
                            "seed {}: {} samples, final smse {:.4}, msll {:.4}",
                            o.seed,
                            last.map_or(0, |r| r.num_samples),
                            last.map_or(f64::NAN, |r| r.smse),
                            last.map_or(f64::NAN, |r| r.msll),
                        );
                    }
                    Some(e) => {
                        eprintln!("seed {} failed: {e}", o.seed);
                        failures += 1;
                    }
                }
            }
            println!("wrote {}", curves.display());
            Ok(failures)
        }
        Command::Sweep { suite, config, out, iters } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let mut failures = 0;
            match suite.as_str() {
                "sensitivity" => {
                    for cell in run_sensitivity_suite(&cfg)? {
                        report_cell(&cell, &mut failures);
                    }
                }
                "ablation" => {
                    for cell in run_ablation_suite(&cfg)? {
                        report_cell(&cell, &mut failures);
                    }
                }
                "overfitting" => {
                    for trace in run_overfitting_suite(&cfg, iters)? {
                        println!(
                            "{}: {} iterations, final train msll {:.4}, test msll {:.4}",
                            trace.kernel,
                            trace.train_msll.len(),
                            trace.train_msll.last().copied().unwrap_or(f64::NAN),
                            trace.test_msll.last().copied().unwrap_or(f64::NAN),
                        );
                    }
                }
                other => return Err(format!("unknown suite {other:?}").into()),
            }
            Ok(failures)
        }
        Command::Plot { input } => {
            let mut plotted = 0;
            for entry in std::fs::read_dir(&input)? {
                let path = entry?.path();
                if path.extension().is_none_or(|e| e != "csv") {
                    continue;
                }
                let Ok(rows) = read_curves_csv(&path) else {
                    continue; // summary or grid files
                };
                if rows.is_empty() {
                    continue;
                }
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                for metric in ["smse", "msll"] {
                    let out = input.join(format!("{stem}_{metric}.svg"));
                    plot_metric_svg(&rows, metric, &out)?;
                    plotted += 1;
                }
            }
            println!("wrote {plotted} plot(s) in {}", input.display());
            Ok(0)
        }
    }
}

fn report_cell(cell: &attentive_gp::harness::SweepCell, failures: &mut usize) {
    match (&cell.summary, &cell.error) {
        (Some(s), None) => {
            println!("{}: msll {:.4} +/- {:.4} ({} seeds)", cell.label, s.mean.msll, s.std.msll, s.n_seeds)
        }
        (Some(s), Some(e)) => {
            eprintln!("{}: partial failure ({e}); msll {:.4} over {} seeds", cell.label, s.mean.msll, s.n_seeds);
            *failures += 1;
        }
        (_, Some(e)) => {
            eprintln!("{} failed: {e}", cell.label);
            *failures += 1;
        }
        _ => {}
    }
}
