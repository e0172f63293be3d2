use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cmdp_lab::harness::{diagnostics_report, random_thetas, run_experiment, sweep, RunConfig};
use cmdp_lab::oracle::oracle_report;
use cmdp_lab::zoo::{catalog, EnvSpec};
use cmdp_lab::{Model, Policy};

#[derive(Parser)]
#[command(name = "cmdp-lab", version, about = "Primal-dual natural actor-critic experiments on unichain CMDPs")]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Replace MLMC estimates by exact stationary means.
    #[arg(long, global = true)]
    debug_exact: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and print the summary.
    Run { config: PathBuf },
    /// Run a config at several horizons and print the scaling table.
    Sweep {
        config: PathBuf,
        /// Horizons, ascending powers of two.
        #[arg(long = "T", num_args = 1.., required = true)]
        horizons: Vec<usize>,
    },
    /// Exact quantities for one policy. `model` is a model file or a
    /// built-in name; `theta` is a JSON array, a file holding one, or
    /// `uniform`.
    Oracle { model: String, theta: String },
    /// Built-in environments.
    Envs {
        #[command(subcommand)]
        action: EnvsAction,
    },
    /// Condition checks at random policies.
    Diagnose { config: PathBuf },
}

#[derive(Subcommand)]
enum EnvsAction {
    /// Names, parameters and oracle facts.
    List,
    /// Write a built-in environment in the model file format.
    Export {
        name: String,
        /// JSON object of parameters, e.g. '{"p": 0.25}'.
        #[arg(long, default_value = "{}")]
        params: String,
        /// Destination; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.algo.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.debug.exact |= cli.debug_exact;
    Ok(cfg)
}

fn load_model(arg: &str) -> Result<Model> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return Ok(Model::from_json(&text)?);
    }
    Ok(EnvSpec::from_name(arg, &serde_json::json!({}))?.build()?)
}

fn load_theta(arg: &str, model: &Model) -> Result<Vec<f64>> {
    if arg == "uniform" {
        return Ok(vec![0.0; model.n_states() * model.n_actions()]);
    }
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    serde_json::from_str(&text).context("theta must be a JSON array of numbers")
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load_config(cli, config)?;
            let exp = run_experiment(&cfg)?;
            print_json(&exp.summary)
        }
        Command::Sweep { config, horizons } => {
            let cfg = load_config(cli, config)?;
            let table = sweep(&cfg, horizons)?;
            print_json(&table)
        }
        Command::Oracle { model, theta } => {
            let model = load_model(model)?;
            let theta = load_theta(theta, &model)?;
            let policy = Policy::for_model(&model, theta)?;
            print_json(&oracle_report(&model, &policy)?)
        }
        Command::Envs { action } => match action {
            EnvsAction::List => {
                let rows = catalog()
                    .into_iter()
                    .map(|e| {
                        let truth = e.ground_truth()?;
                        Ok(serde_json::json!({
                            "spec": e.spec,
                            "phenomenon": e.phenomenon,
                            "ground_truth": truth,
                        }))
                    })
                    .collect::<Result<Vec<_>>>()?;
                print_json(&rows)
            }
            EnvsAction::Export { name, params, output } => {
                let params: serde_json::Value = serde_json::from_str(params).context("--params must be a JSON object")?;
                if !params.is_object() {
                    bail!("--params must be a JSON object");
                }
                let model: Model = EnvSpec::from_name(name, &params)?.build()?;
                let text = model.to_json()?;
                match output {
                    Some(path) => fs::write(path, text)?,
                    None => emit(&text)?,
                }
                Ok(())
            }
        },
        Command::Diagnose { config } => {
            let cfg = load_config(cli, config)?;
            let model = cfg.build_model()?;
            let d = &cfg.diagnose;
            let thetas = random_thetas(&model, d.n_thetas, d.theta_scale, cfg.algo.seed);
            let report = diagnostics_report(&model, &thetas, d, cfg.algo.seed)?;
            if let Some(dir) = &cfg.out_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
