use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platoon_cli::config::{echo, Overrides, RunConfig};
use platoon_cli::{emit_outputs, parse_config, render_timespace_plot, run_suite};

#[derive(Parser)]
#[command(
    name = "platoon",
    version,
    about = "Open-system highway platooning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Horizon in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Step size in seconds.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write timespace.svg for the window T_A:T_B.
        #[arg(long, value_name = "T_A:T_B", value_parser = parse_window)]
        plot: Option<(f64, f64)>,
    },
    /// Run the acceptance property suite.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected T_A:T_B")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad T_A: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad T_B: {e}"))?;
    Ok((a, b))
}

fn run(cfg: RunConfig) -> Result<(), Box<dyn std::error::Error>> {
    let params = cfg.effective_params()?;
    let output = platoon_core::sim::run(&params)?;
    let written = emit_outputs(&output, &params, &echo(&params)?, &cfg.out_dir)?;
    if let Some((t_a, t_b)) = cfg.plot {
        let svg = render_timespace_plot(&output.trajectory, &params, t_a, t_b)?;
        let path = cfg.out_dir.join("timespace.svg");
        std::fs::write(&path, svg).map_err(|source| platoon_cli::OutputError {
            path: path.clone(),
            source,
        })?;
        println!("wrote {}", path.display());
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    let s = &output.summary;
    println!(
        "{} steps, {} spawned, {} exited, {} splits, {} merges",
        s.steps, s.spawned, s.exited, s.splits, s.merges
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            duration,
            dt,
            out,
            plot,
        } => {
            let cfg = RunConfig {
                config_path: config,
                overrides: Overrides { seed, duration, dt },
                out_dir: out,
                plot,
            };
            match run(cfg) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify { config } => {
            let params = match parse_config(&config) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let results = run_suite(&params);
            for r in &results {
                println!("{r}");
            }
            let failing: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name)
                .collect();
            if failing.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failing checks: {}", failing.join(", "));
                ExitCode::FAILURE
            }
        }
    }
}
