use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffusion_ls::harness::{emit_plots, run_experiment, validate_config, RunError};
use diffusion_ls::toolkit::{run_lemma_suite, LemmaKind, SuiteConfig};

#[derive(Parser)]
#[command(name = "diffusion-ls", version, about = "Distributed least-squares simulations and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Parse and cross-check a config without running it.
    Validate { config: PathBuf },
    /// Randomized checks of the matrix inequalities.
    LemmaCheck {
        /// Inequality id, or `all`.
        #[arg(long, default_value = "all")]
        lemma: String,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write SVG charts for a finished run directory.
    Plot { dir: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VIOLATION: u8 = 4;
const EXIT_IO: u8 = 5;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = match validate_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let summary = match run_experiment(&cfg) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    let code = match e {
                        RunError::Io { .. } => EXIT_IO,
                        _ => EXIT_NUMERICAL,
                    };
                    return ExitCode::from(code);
                }
            };
            for s in &summary.algorithms {
                println!(
                    "{}: final mean squared errors {:?}, mean accumulated regret {:.4}",
                    s.algorithm, s.mean_final_sq_errors, s.mean_accumulated_regret
                );
            }
            // charts never gate the metric outputs
            if let Err(e) = emit_plots(&summary.output_dir) {
                eprintln!("plotting skipped: {e}");
            }
            println!("outputs in {}", summary.output_dir.display());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match validate_config(&config) {
            Ok(cfg) => {
                println!(
                    "ok: n={} m={} T={} runs={} algorithms={:?} cadence={}",
                    cfg.n(),
                    cfg.m(),
                    cfg.horizon,
                    cfg.runs,
                    cfg.algorithms.iter().map(|a| a.id()).collect::<Vec<_>>(),
                    cfg.record_cadence
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::LemmaCheck {
            lemma,
            draws,
            dims,
            nodes,
            seed,
        } => {
            let kinds: Vec<LemmaKind> = if lemma == "all" {
                LemmaKind::ALL.to_vec()
            } else {
                match lemma.parse() {
                    Ok(k) => vec![k],
                    Err(e) => {
                        eprintln!("{e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
            };
            let cfg = SuiteConfig {
                draws,
                dims,
                nodes,
                seed,
                ..SuiteConfig::default()
            };
            let mut failed = false;
            for k in kinds {
                match run_lemma_suite(k, &cfg) {
                    Ok(r) => {
                        println!("{}", serde_json::to_string(&r).expect("plain data serializes"));
                        failed |= !r.passed();
                    }
                    Err(e) => {
                        eprintln!("{k}: {e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
            }
            if failed {
                ExitCode::from(EXIT_VIOLATION)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Plot { dir } => match emit_plots(&dir) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_IO)
            }
        },
    }
}
