//! Command-line front end: design, analysis, sweep, and simulation
//! commands with CSV/JSON output for plotting and regression baselines.

mod config;
mod emit;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{CommandKind, OutputFormat, RunConfig};
use platoon_h2::homotopy::homotopy_continue;
use platoon_h2::scaling::{sweep_with_settings, SweepSettings};
use platoon_h2::simulate::{default_dt, simulate_variance};
use platoon_h2::symmetric::gradient_descend;
use platoon_h2::{assemble, performance, ModelKind, StateWeight, StructuredGain};

#[derive(Parser)]
#[command(
    name = "platoon-h2",
    version,
    about = "Structured H2 design and coherence scaling for 1-D vehicle platoons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Number of vehicles.
    #[arg(long)]
    n: Option<usize>,
    /// Vehicle model: single | double.
    #[arg(long)]
    model: Option<String>,
    /// Fictitious follower present (the default).
    #[arg(long, conflicts_with = "no_follower")]
    follower: bool,
    /// Remove the fictitious follower (forces b_N = 0).
    #[arg(long)]
    no_follower: bool,
    /// Control penalty r (> 0).
    #[arg(long)]
    r: Option<f64>,
    /// RNG seed for stochastic commands.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
    /// Output format: csv | json.
    #[arg(long)]
    format: Option<String>,
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Convex symmetric gain design (single-integrator model).
    DesignSymmetric {
        #[command(flatten)]
        common: CommonArgs,
        /// Gradient-norm stopping tolerance.
        #[arg(long)]
        grad_tol: Option<f64>,
        /// Iteration cap.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Homotopy design of the optimal non-symmetric structured gain.
    DesignHomotopy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        grad_tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Number of continuation stages (log-spaced).
        #[arg(long)]
        stages: Option<usize>,
        /// Smallest homotopy parameter.
        #[arg(long)]
        eps_min: Option<f64>,
        /// Base uniform position gain (double-integrator model).
        #[arg(long)]
        alpha: Option<f64>,
        /// Base uniform velocity gain (double-integrator model).
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Evaluate the performance measures of a gain profile CSV.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Gain profile CSV (n,forward,backward[,velocity]).
        #[arg(long)]
        gains: Option<String>,
    },
    /// Sweep formation size for one controller family.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// uniform-symmetric | look-ahead | optimal-symmetric | optimal-nonsymmetric.
        #[arg(long)]
        family: Option<String>,
        /// Grid: start:stop:step or a comma list.
        #[arg(long)]
        n_grid: Option<String>,
        /// Penalty rule: constant:v | linear:c | sqrt:c.
        #[arg(long)]
        penalty: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Monte-Carlo estimate of the performance measures.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Gain profile CSV to simulate (otherwise --family).
        #[arg(long)]
        gains: Option<String>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        penalty: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Simulation horizon in time units.
        #[arg(long)]
        horizon: Option<f64>,
        /// Integrator step (default 1e-3 / max|eig|, capped at 1e-2).
        #[arg(long)]
        dt: Option<f64>,
        /// Number of sample paths.
        #[arg(long)]
        paths: Option<usize>,
    },
}

fn follower_flag(common: &CommonArgs) -> Option<bool> {
    if common.no_follower {
        Some(false)
    } else if common.follower {
        Some(true)
    } else {
        None
    }
}

fn format_flag(common: &CommonArgs) -> Result<OutputFormat> {
    match common.format.as_deref() {
        None | Some("csv") => Ok(OutputFormat::Csv),
        Some("json") => Ok(OutputFormat::Json),
        Some(other) => bail!("unknown format '{other}' (expected csv|json)"),
    }
}

fn base_config(kind: CommandKind, common: &CommonArgs) -> Result<RunConfig> {
    Ok(RunConfig {
        command: kind,
        n: common.n,
        model: common.model.clone(),
        follower: follower_flag(common),
        r: common.r,
        family: None,
        penalty: None,
        n_grid: None,
        alpha: None,
        beta: None,
        grad_tol: None,
        max_iters: None,
        stages: None,
        eps_min: None,
        gains: None,
        horizon: None,
        dt: None,
        paths: None,
        seed: common.seed.unwrap_or(0),
        out: common.out.clone(),
        format: format_flag(common)?,
    })
}

fn load_config_file(path: &str) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config file {path}"))
}

fn finalize(flags: RunConfig, common: &CommonArgs) -> Result<RunConfig> {
    let merged = match &common.config {
        Some(path) => flags.merged_over(load_config_file(path)?),
        None => flags,
    };
    Ok(merged)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::DesignSymmetric {
            common,
            grad_tol,
            max_iters,
        } => {
            let mut cfg = base_config(CommandKind::DesignSymmetric, &common)?;
            cfg.grad_tol = grad_tol;
            cfg.max_iters = max_iters;
            let cfg = finalize(cfg, &common)?;
            let spec = cfg.spec()?;
            if spec.model != ModelKind::SingleIntegrator {
                bail!("design-symmetric applies to the single-integrator model");
            }
            let k = gradient_descend(&spec, &cfg.gradient_settings(), None)?;
            let gain = k.to_structured();
            let content = match cfg.format {
                OutputFormat::Csv => emit::gain_csv(&cfg, &gain)?,
                OutputFormat::Json => {
                    emit::json_envelope(&cfg, serde_json::json!({ "k": k, "gain": gain }))?
                }
            };
            emit::write_output(&cfg.out, &content)?;
        }
        Command::DesignHomotopy {
            common,
            grad_tol,
            max_iters,
            stages,
            eps_min,
            alpha,
            beta,
        } => {
            let mut cfg = base_config(CommandKind::DesignHomotopy, &common)?;
            cfg.grad_tol = grad_tol;
            cfg.max_iters = max_iters;
            cfg.stages = stages;
            cfg.eps_min = eps_min;
            cfg.alpha = alpha;
            cfg.beta = beta;
            let cfg = finalize(cfg, &common)?;
            let spec = cfg.spec()?;
            let q_d = StateWeight::global(&spec);
            let trace =
                homotopy_continue(&spec, &q_d, &cfg.homotopy_settings(), &cfg.uniform_base())?;
            let content = match cfg.format {
                OutputFormat::Csv => emit::gain_csv(&cfg, trace.final_gain())?,
                OutputFormat::Json => emit::json_envelope(&cfg, &trace)?,
            };
            emit::write_output(&cfg.out, &content)?;
        }
        Command::Analyze { common, gains } => {
            let mut cfg = base_config(CommandKind::Analyze, &common)?;
            cfg.gains = gains;
            let cfg = finalize(cfg, &common)?;
            let path = cfg
                .gains
                .clone()
                .ok_or_else(|| anyhow!("--gains is required"))?;
            let text =
                std::fs::read_to_string(&path).with_context(|| format!("reading {path}"))?;
            let gain = emit::parse_gain_csv(&text)?;
            let n = gain.forward.len();
            if let Some(expected) = cfg.n {
                if expected != n {
                    bail!("--n {expected} does not match the {n} rows in {path}");
                }
            }
            let model = if gain.velocity.is_some() {
                ModelKind::DoubleIntegrator
            } else {
                cfg.model_kind()?
            };
            let spec = platoon_h2::FormationSpec::new(
                n,
                model,
                cfg.follower.unwrap_or(true),
                cfg.r.unwrap_or(1.0),
            )?;
            let sys = assemble(&spec, &gain)?;
            let rep = performance(&sys, &spec)?;
            let content = match cfg.format {
                OutputFormat::Csv => emit::report_csv(&cfg, &rep)?,
                OutputFormat::Json => emit::json_envelope(&cfg, rep)?,
            };
            emit::write_output(&cfg.out, &content)?;
        }
        Command::Sweep {
            common,
            family,
            n_grid,
            penalty,
            alpha,
            beta,
        } => {
            let mut cfg = base_config(CommandKind::Sweep, &common)?;
            cfg.family = family;
            cfg.n_grid = n_grid;
            cfg.penalty = penalty;
            cfg.alpha = alpha;
            cfg.beta = beta;
            let cfg = finalize(cfg, &common)?;
            let fam = cfg.family()?;
            let grid = cfg.grid()?;
            let template = platoon_h2::FormationSpec::new(
                1,
                cfg.model_kind()?,
                cfg.follower.unwrap_or(true),
                1.0,
            )?;
            let mut settings = SweepSettings {
                base: cfg.uniform_base(),
                ..SweepSettings::default()
            };
            if let Some(t) = cfg.grad_tol {
                settings.gradient.grad_tol = t;
                settings.homotopy.grad_tol = t;
            }
            let result = sweep_with_settings(&fam, &grid, &template, &settings)?;
            let content = match cfg.format {
                OutputFormat::Csv => emit::sweep_csv(&cfg, &result)?,
                OutputFormat::Json => emit::json_envelope(&cfg, &result)?,
            };
            emit::write_output(&cfg.out, &content)?;
        }
        Command::Simulate {
            common,
            gains,
            family,
            penalty,
            alpha,
            beta,
            horizon,
            dt,
            paths,
        } => {
            let mut cfg = base_config(CommandKind::Simulate, &common)?;
            cfg.gains = gains;
            cfg.family = family;
            cfg.penalty = penalty;
            cfg.alpha = alpha;
            cfg.beta = beta;
            cfg.horizon = horizon;
            cfg.dt = dt;
            cfg.paths = paths;
            let cfg = finalize(cfg, &common)?;
            let (spec, gain) = if let Some(path) = &cfg.gains {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
                let gain = emit::parse_gain_csv(&text)?;
                let model = if gain.velocity.is_some() {
                    ModelKind::DoubleIntegrator
                } else {
                    cfg.model_kind()?
                };
                let spec = platoon_h2::FormationSpec::new(
                    gain.forward.len(),
                    model,
                    cfg.follower.unwrap_or(true),
                    cfg.r.unwrap_or(1.0),
                )?;
                (spec, gain)
            } else {
                let spec = cfg.spec()?;
                let fam = cfg.family()?;
                let gain = match fam.kind {
                    platoon_h2::scaling::ControllerKind::UniformSymmetric { alpha, beta } => {
                        StructuredGain::uniform_symmetric(&spec, alpha, beta.unwrap_or(0.0))
                    }
                    platoon_h2::scaling::ControllerKind::LookAhead { alpha, beta } => {
                        StructuredGain::look_ahead(&spec, alpha, beta.unwrap_or(0.0))
                    }
                    _ => bail!("simulate supports uniform families or --gains input"),
                };
                (spec, gain)
            };
            let sys = assemble(&spec, &gain)?;
            let dt = cfg.dt.unwrap_or_else(|| default_dt(&sys));
            let est = simulate_variance(
                &sys,
                &spec,
                cfg.horizon.unwrap_or(200.0),
                dt,
                cfg.seed,
                cfg.paths.unwrap_or(32),
            )?;
            let content = match cfg.format {
                OutputFormat::Csv => emit::simulation_csv(&cfg, &est)?,
                OutputFormat::Json => emit::json_envelope(&cfg, est)?,
            };
            emit::write_output(&cfg.out, &content)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        let record = serde_json::json!({ "error": format!("{err:#}") });
        eprintln!("{record}");
        std::process::exit(1);
    }
}
