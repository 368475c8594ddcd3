use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppde_cli::runner::run_scenario;
use ppde_cli::scenario;
use ppde_core::catalog;

#[derive(Parser)]
#[command(
    name = "ppde",
    about = "Scenario runner for the path-dependent PDE / stochastic game toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write results.json, CSV tables and a
    /// manifest into the output directory.
    Run {
        /// Scenario file (TOML).
        file: PathBuf,
        /// Output directory (overrides the scenario's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results are identical for any value).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the built-in test problems and their oracles; optionally emit
    /// ready-made scenario files.
    Catalog {
        /// Write the default scenario files into this directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Die quietly when stdout is a closed pipe (`ppde catalog | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            file,
            out,
            seed,
            jobs,
        } => {
            if let Some(n) = jobs {
                // Per-sample streams keep results identical for any pool
                // size; this only changes wall time.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", file.display());
                    return ExitCode::from(2);
                }
            };
            let parsed = match scenario::parse(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("parse error in {}: {e}", file.display());
                    return ExitCode::from(2);
                }
            };
            let out_dir = out
                .or_else(|| parsed.output.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs").join(sanitize(&parsed.name)));
            match run_scenario(&parsed, &out_dir, seed) {
                Ok(outcome) => {
                    for c in &outcome.results.checks {
                        println!(
                            "{} {}: value {} tolerance {} ({} samples)",
                            if c.pass { "PASS" } else { "FAIL" },
                            c.name,
                            c.value,
                            c.tolerance,
                            c.samples
                        );
                    }
                    if outcome.results.pass {
                        println!("ok: {} -> {}", parsed.name, outcome.out_dir.display());
                        ExitCode::SUCCESS
                    } else {
                        let failing: Vec<&str> = outcome
                            .results
                            .checks
                            .iter()
                            .filter(|c| !c.pass)
                            .map(|c| c.name.as_str())
                            .collect();
                        eprintln!("failed checks: {}", failing.join(", "));
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("run error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Catalog { emit } => {
            for entry in catalog::entries() {
                println!("{:24} {}", entry.name, entry.summary);
                println!("{:24} oracle: {}", "", entry.oracle);
            }
            if let Some(dir) = emit {
                if let Err(e) = std::fs::create_dir_all(&dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
                for (name, s) in ppde_cli::catalog_scenarios::all() {
                    let path = dir.join(&name);
                    if let Err(e) = std::fs::write(&path, scenario::to_toml(&s)) {
                        eprintln!("error writing {}: {e}", path.display());
                        return ExitCode::from(1);
                    }
                    println!("wrote {}", path.display());
                }
            }
            ExitCode::SUCCESS
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}
