use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use kdv_cli::{batch, compare, kernels, run, CliError};
use kdv_core::KernelMethod;

#[derive(Parser)]
#[command(
    name = "kdv",
    version,
    about = "Backstepping boundary control of the KdV equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write plot.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Run every `*.toml` scenario in a directory.
    Batch {
        config_dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Concurrent runs (default: available cores).
        #[arg(short, long)]
        jobs: Option<usize>,
    },
    /// Compare the decay of finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Write the plant L2 series side by side to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve the gain kernels and write tables plus residuals.
    Kernels {
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, default_value_t = 81)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Method::Polynomial)]
        method: Method,
        /// Polynomial degree for the default method.
        #[arg(long, default_value_t = 14)]
        degree: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Polynomial,
    Lattice,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, plot } => {
            let start = Instant::now();
            let o = run(&config, &out, plot)?;
            let rate = o
                .summary
                .plant_rate()
                .map_or("undefined".to_string(), |r| format!("{r:.6}"));
            println!(
                "{}: {} records, plant L2 {:.3e} -> {:.3e}, rate {rate}",
                out.display(),
                o.summary.records,
                o.summary.plant_l2_initial,
                o.summary.plant_l2_final
            );
            eprintln!("finished in {:.2?}", start.elapsed());
        }
        Command::Batch {
            config_dir,
            out,
            jobs,
        } => {
            let start = Instant::now();
            let b = batch(&config_dir, &out, jobs)?;
            for e in &b.entries {
                let rate = e
                    .plant_l2_rate
                    .map_or("undefined".to_string(), |r| format!("{r:.6}"));
                println!("{:<24} {:<16} {:<10} rate {rate}", e.name, e.mode, e.status);
            }
            if b.plot {
                println!("wrote {}", out.join("plot.svg").display());
            }
            eprintln!("finished in {:.2?}", start.elapsed());
            if let Some(err) = b.error {
                return Err(err);
            }
        }
        Command::Compare { dirs, csv } => {
            let c = compare(&dirs)?;
            print!("{}", c.report());
            if let Some(path) = csv {
                let text = c.series_csv()?;
                std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            }
        }
        Command::Kernels {
            lambda,
            m,
            method,
            degree,
            out,
        } => {
            let method = match method {
                Method::Polynomial => KernelMethod::Polynomial { degree },
                Method::Lattice => KernelMethod::Lattice,
            };
            let res = kernels(lambda, m, method, &out)?;
            for (kind, r) in &res.summary.kernels {
                println!(
                    "{kind}: trace {:.3e}, pde interior {:.3e}",
                    r.trace_max, r.pde_interior_max
                );
            }
            println!(
                "reciprocity k/l {:.3e}, p/r {:.3e}",
                res.summary.reciprocity_kl, res.summary.reciprocity_pr
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit code 2 is reserved for numerical failures.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
