use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexrb_cli::bench::{cmd_bench, parse_counts};
use flexrb_cli::commands::{cmd_couple, cmd_mesh, cmd_offline, cmd_solve, parse_mu};
use flexrb_cli::config::parse_solver;
use flexrb_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "flexrb", version, about = "Reduced basis shape parametrization for Stokes flow in a channel with a flexible wall")]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for all random stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the rest mesh.
    Mesh,
    /// Solve the flow at one parameter.
    Solve {
        /// Comma separated parameter values.
        #[arg(long, allow_hyphen_values = true)]
        mu: String,
        /// full_fem, reduced_fem or rb.
        #[arg(long, default_value = "full_fem")]
        solver: String,
    },
    /// Train the tensor interpolation and the reduced basis.
    Offline,
    /// Run the fluid-wall fixed-point iteration.
    Couple {
        /// Overrides `[coupling] solver`.
        #[arg(long)]
        solver: Option<String>,
    },
    /// Compare solver costs against the number of evaluations.
    Bench {
        #[arg(long, default_value = "1,10,100,1000")]
        counts: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = cli.out {
        config.output.dir = dir;
    }
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    match cli.command {
        Command::Mesh => {
            let path = cmd_mesh(&config)?;
            println!("mesh written to {}", path.display());
        }
        Command::Solve { mu, solver } => {
            let kind = parse_solver(&solver)?;
            let mu = parse_mu(&mu, &config)?;
            let out = cmd_solve(&config, &mu, kind)?;
            let s = out.summary;
            println!("solver          {}", kind.name());
            println!("solve time      {:.3} s", out.solve_seconds);
            println!("flow rate       {:.9e} cm^2/s", s.flow_rate);
            println!("pressure drop   {:.9e} g/(cm s^2)", s.pressure_drop);
            println!("mean pressure   {:.3e}", s.mean_pressure);
            println!("wall traction   [{:.6e}, {:.6e}]", s.traction_min, s.traction_max);
            for f in out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Offline => {
            let result = cmd_offline(&config);
            let report = config.output.dir.join(flexrb_cli::commands::REPORT_FILE);
            if let Ok(text) = std::fs::read_to_string(&report) {
                print!("{text}");
            }
            result?;
        }
        Command::Couple { solver } => {
            let kind = match solver {
                Some(s) => parse_solver(&s)?,
                None => config.solver()?,
            };
            let state = cmd_couple(&config, kind)?;
            println!(
                "converged after {} iterations, mu = {:?}, J = {:.3e}",
                state.iterations(),
                state.mu.0,
                state.final_misfit()
            );
        }
        Command::Bench { counts } => {
            let counts = parse_counts(&counts)?;
            let out = cmd_bench(&config, &counts)?;
            if let Some(costs) = &out.costs {
                for (kind, offline, per) in &costs.kinds {
                    println!("{:<12} offline {:>10.3} s   per solve {:>12.6e} s", kind.name(), offline, per);
                }
                use flexrb::coupling::SolverKind::*;
                match costs.crossover(Rb, FullFem) {
                    Some(n) => println!("reduced basis beats full FEM from {n} evaluations"),
                    None => println!("reduced basis never beats full FEM"),
                }
            }
            println!("wrote {}", config.output.dir.join("bench.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
