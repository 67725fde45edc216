use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diralg_cli::scenario::Scenario;
use diralg_cli::{catalog_json, catalog_text, check, run, run_sweep, sweep_exit_code, Failure, Sweep};

/// Lagrangian, Hamiltonian and optimal-control runs on Dirac algebroids.
#[derive(Parser)]
#[command(name = "diralg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario; writes the trajectory CSV and the JSON report.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides the scenario's `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fan out over PARAM=a:b:n, one worker thread per trajectory.
        #[arg(long)]
        sweep: Option<Sweep>,
    },
    /// Print the built-in systems.
    ListSystems {
        /// Emit the catalog and the scenario JSON schema.
        #[arg(long)]
        json: bool,
    },
    /// Run the scenario's structure checks only.
    Check { scenario: PathBuf },
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("error: {f}");
    code(f.exit_code())
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListSystems { json } => {
            if json {
                println!("{}", serde_json::to_string_pretty(&catalog_json()).expect("catalog serializes"));
            } else {
                print!("{}", catalog_text());
            }
            ExitCode::SUCCESS
        }
        Command::Check { scenario } => {
            let sc = match Scenario::load(&scenario) {
                Ok(sc) => sc,
                Err(f) => return fail(&f),
            };
            match check(&sc) {
                Ok((report, failed)) => {
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                    if failed {
                        eprintln!("error: structure check failed");
                        code(3)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(f) => fail(&f),
            }
        }
        Command::Run { scenario, out, sweep } => {
            let sc = match Scenario::load(&scenario) {
                Ok(sc) => sc,
                Err(f) => return fail(&f),
            };
            if let Some(sweep) = sweep {
                let members = run_sweep(&sc, &sweep, out.as_deref());
                for m in &members {
                    match &m.outcome {
                        Ok(o) => println!("{}={} -> {} (exit {})", sweep.param, m.value, m.dir.display(), o.exit_code()),
                        Err(f) => println!("{}={} -> error (exit {}): {f}", sweep.param, m.value, f.exit_code()),
                    }
                }
                return code(sweep_exit_code(&members));
            }
            match run(&sc, out.as_deref()) {
                Ok(o) => {
                    println!("wrote {} and {}", o.csv_path.display(), o.report_path.display());
                    if o.checks_failed {
                        eprintln!("error: structure check failed");
                    }
                    code(o.exit_code())
                }
                Err(f) => fail(&f),
            }
        }
    }
}
