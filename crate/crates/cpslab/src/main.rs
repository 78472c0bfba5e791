use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cpslab::factory::verify_bezout;
use cpslab::mcstation::{design_attack_postfilter, resilient_performance_check};
use cpslab::scenario::{emit_outputs, load_config, preset_names, reproduce_all, run_resolved, Experiment, ScenarioConfig};
use cpslab::sscore::{linalg, SystemSpec};
use cpslab::{Error, Result};

/// Residual-transmission control loop laboratory.
#[derive(Parser)]
#[command(name = "cpslab", version)]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true, env = "CPSLAB_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the run length in steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config file or built-in preset name.
    config: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectories, verdicts, a report and the config echo.
    Simulate(ConfigArg),
    /// Reproduce case-study experiments E1..E6, or `all`.
    Reproduce { experiment: String },
    /// Print the coprime factors of the configured plant and gains.
    Factorize(ConfigArg),
    /// Check the Bezout identity on a frequency grid.
    VerifyBezout {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 512)]
        grid: usize,
    },
    /// Print the whitening post-filter of the attack detector.
    DesignPostfilter(ConfigArg),
    /// Evaluate the resilience norms of the configured filters.
    CheckPerformance {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        gamma_theta: Option<f64>,
        #[arg(long)]
        gamma_ry: Option<f64>,
    },
    /// List the built-in presets.
    Presets,
}

fn load(cli: &Cli, arg: &ConfigArg) -> Result<ScenarioConfig> {
    let mut cfg = load_config(&arg.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.steps {
        cfg.steps = Some(n);
    }
    Ok(cfg)
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(arg) => {
            let cfg = load(cli, arg)?;
            let resolved = cfg.resolve()?;
            for w in &resolved.warnings {
                eprintln!("warning: {w}");
            }
            let log = run_resolved(&resolved)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            for p in emit_outputs(&log, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Reproduce { experiment } => {
            let exps: Vec<Experiment> = if experiment.eq_ignore_ascii_case("all") {
                Experiment::ALL.to_vec()
            } else {
                vec![experiment.parse()?]
            };
            let mut failed = false;
            for (e, res) in exps.iter().zip(reproduce_all(&exps)) {
                let rep = res?;
                print!("{}", rep.render());
                failed |= !rep.passed();
                if let Some(root) = &cli.out {
                    for log in &rep.runs {
                        emit_outputs(log, &root.join(e.to_string()).join(&log.name))?;
                    }
                }
            }
            if failed {
                println!("some checks failed");
            }
        }
        Command::Factorize(arg) => {
            let f = load(cli, arg)?.resolve()?.mc.factors;
            let spec = |s| SystemSpec::from_state_space(s);
            print_json(&serde_json::json!({
                "f": linalg::mat_to_rows(&f.gains.f),
                "l": linalg::mat_to_rows(&f.gains.l),
                "m": spec(&f.m), "n": spec(&f.n),
                "m_hat": spec(&f.m_hat), "n_hat": spec(&f.n_hat),
                "x": spec(&f.x), "y": spec(&f.y),
                "x_hat": spec(&f.x_hat), "y_hat": spec(&f.y_hat),
            }))?;
        }
        Command::VerifyBezout { cfg, grid } => {
            let f = load(cli, cfg)?.resolve()?.mc.factors;
            println!("max Bezout deviation on {grid} frequencies: {:e}", verify_bezout(&f, *grid)?);
        }
        Command::DesignPostfilter(arg) => {
            let mc = load(cli, arg)?.resolve()?.mc;
            let r = design_attack_postfilter(&mc.q_r1, &mc.sigma_ry)?;
            print_json(&SystemSpec::from_state_space(&r))?;
        }
        Command::CheckPerformance { cfg, gamma_theta, gamma_ry } => {
            let mc = load(cli, cfg)?.resolve()?.mc;
            let rep = resilient_performance_check(&mc.factors, &mc.q_r1, &mc.q_r2, &mc.q_umc, (*gamma_theta, *gamma_ry))?;
            print_json(&rep)?;
        }
        Command::Presets => {
            for n in preset_names() {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
