use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use redspace::benchmarks::{benchmark, benchmark_registry};
use redspace::evaluator::serve;
use redspace::experiment::{parse_config, run_experiment, seed_offset_from_env, summarize};

#[derive(Parser)]
#[command(name = "redspace", version, about = "Bayesian optimisation in learned low-dimensional subspaces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (method, seed) pair of an experiment configuration.
    Run {
        config: PathBuf,
        /// Results directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs (overrides `parallelism` in the config).
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Recompute summary.csv and targets.csv from the traces in a directory.
    Summarize { dir: PathBuf },
    /// List built-in benchmark problems.
    ListBenchmarks,
    /// Serve a built-in benchmark over the stdin/stdout line protocol.
    #[command(hide = true)]
    Serve { benchmark: String },
}

fn real_main() -> redspace::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            config,
            out,
            parallelism,
        } => {
            let cfg = parse_config(&config)?;
            let offset = seed_offset_from_env()?;
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let workers = parallelism
                .or(cfg.parallelism)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            if workers == 0 {
                return Err(redspace::Error::config("parallelism", "must be >= 1"));
            }
            let report = run_experiment(&cfg, &out, workers, offset)?;
            for r in &report.manifest.runs {
                let inc = r
                    .final_incumbent
                    .map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
                match &r.error {
                    None => println!(
                        "{:<8} seed {:<6} ok      evals {:<4} incumbent {inc}  ({:.1} s)",
                        r.method.label(),
                        r.effective_seed,
                        r.evaluations,
                        r.wall_time_s
                    ),
                    Some(e) => println!(
                        "{:<8} seed {:<6} FAILED  evals {:<4} incumbent {inc}  {e}",
                        r.method.label(),
                        r.effective_seed,
                        r.evaluations
                    ),
                }
            }
            println!("results written to {}", out.display());
            let failed = report.manifest.failed();
            if failed > 0 {
                eprintln!("{failed} run(s) failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Summarize { dir } => {
            let s = summarize(&dir)?;
            print!("{}", s.targets_csv());
            let last: Vec<_> = {
                let mut by = std::collections::BTreeMap::new();
                for r in &s.convergence {
                    by.insert(r.method, r);
                }
                by.into_values().collect()
            };
            for r in last {
                println!(
                    "{:<8} k {:<4} runs {:<3} mean incumbent {:.6} (std {:.6})",
                    r.method.label(),
                    r.k,
                    r.n_runs,
                    r.mean,
                    r.std
                );
            }
        }
        Cmd::ListBenchmarks => {
            for b in benchmark_registry() {
                let p = &b.problem;
                print!(
                    "{:<36} d_s {:<3} constraints {}",
                    b.name,
                    p.d_s(),
                    p.n_constraints()
                );
                if let Some(o) = b.reported_optimum {
                    print!("  reported optimum {o}");
                }
                if let Some(t) = b.target {
                    print!("  target {t}");
                }
                if let Some(c) = b.constraint_omitted {
                    print!("  ({c} constraint omitted)");
                }
                println!();
            }
        }
        Cmd::Serve { benchmark: name } => {
            let b = benchmark(&name)?;
            let stdin = io::stdin();
            serve(&b.problem, stdin.lock(), BufWriter::new(io::stdout().lock()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
