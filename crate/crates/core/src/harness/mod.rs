//! Experiment front end: configuration loading, per-seed runs written as
//! CSV plus a JSON summary, `T` sweeps, and power-law fits.

mod diagnostics;
mod fit;

pub use diagnostics::{diagnostics_report, random_thetas, DiagnoseSettings, ThetaDiagnostics};
pub use fit::{fit_exponent, ExponentFit};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{resolve_config, run, AlgoConfig, AlgoSettings, EstimatorMode, RunOutput};
use crate::error::{Error, Result};
use crate::model::{CmdpModel, FeatureMap, Signal};
use crate::oracle::solve_cmdp_lp;
use crate::zoo::EnvSpec;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "CMDP_LAB_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugFlags {
    /// Replace MLMC estimates by exact stationary means.
    #[serde(default)]
    pub exact: bool,
    /// Count epochs whose burn-in missed the recurrent class.
    #[serde(default = "yes")]
    pub track_burn_in: bool,
}

fn yes() -> bool {
    true
}

impl Default for DebugFlags {
    fn default() -> Self {
        Self {
            exact: false,
            track_burn_in: true,
        }
    }
}

fn one_seed() -> usize {
    1
}

/// One experiment: an environment (built-in or model file), algorithm
/// settings, and how many seeds to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, deserialize_with = "crate::zoo::deserialize_strict")]
    pub env: Option<EnvSpec>,
    /// Model JSON file; relative paths resolve against the config file.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub algo: AlgoSettings,
    #[serde(default = "one_seed")]
    pub n_seeds: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub debug: DebugFlags,
    #[serde(default)]
    pub diagnose: DiagnoseSettings,
}

impl RunConfig {
    pub fn new(env: EnvSpec, algo: AlgoSettings) -> Self {
        Self {
            env: Some(env),
            model: None,
            algo,
            n_seeds: 1,
            out_dir: None,
            debug: DebugFlags::default(),
            diagnose: DiagnoseSettings::default(),
        }
    }

    /// TOML for `.toml`, JSON for `.json`; other extensions try JSON first.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text)?,
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_json(&text).or_else(|_| Self::from_toml(&text))?,
        };
        if let (Some(m), Some(dir)) = (&cfg.model, path.parent()) {
            if m.is_relative() {
                cfg.model = Some(dir.join(m));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.env, &self.model) {
            (Some(_), Some(_)) => Err(Error::Config("give either `env` or `model`, not both".into())),
            (None, None) => Err(Error::Config("one of `env` or `model` is required".into())),
            _ if self.n_seeds == 0 => Err(Error::Config("n_seeds must be at least 1".into())),
            _ => Ok(()),
        }
    }

    pub fn build_model(&self) -> Result<CmdpModel<f64>> {
        self.validate()?;
        match (&self.env, &self.model) {
            (Some(spec), _) => spec.build(),
            (_, Some(path)) => CmdpModel::from_json(&fs::read_to_string(path)?),
            _ => unreachable!("validated above"),
        }
    }

    pub fn env_name(&self) -> String {
        match (&self.env, &self.model) {
            (Some(spec), _) => spec.name().to_string(),
            (_, Some(path)) => path.display().to_string(),
            _ => String::new(),
        }
    }

    /// Settings with the debug switches applied.
    pub fn settings(&self) -> AlgoSettings {
        let mut s = self.algo.clone();
        if self.debug.exact {
            s.mode = EstimatorMode::Exact;
        }
        s
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.algo.seed.wrapping_add(i)).collect()
    }
}

/// Runs `f` inside a pool capped by [`THREADS_ENV`] when it is set.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} = `{v}` is not a thread count")))?;
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub k: usize,
    pub j_r: f64,
    pub j_c: f64,
    pub lambda: f64,
    pub burn_in_hit: bool,
    pub samples_used: usize,
}

/// The measured side of one seed's run.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
    pub j_r_star: f64,
    pub final_j_r: f64,
    pub final_j_c: f64,
    pub final_lambda: f64,
    pub lagrangian_decreases: usize,
}

impl RegretTrace {
    pub fn from_output(seed: u64, j_r_star: f64, out: &RunOutput<f64>) -> Self {
        let steps = out
            .trace
            .iter()
            .enumerate()
            .map(|(t, z)| StepRow {
                t,
                state: z.s,
                action: z.a,
                reward: z.r,
                cost: z.c,
            })
            .collect();
        let epochs = out
            .epochs
            .iter()
            .map(|e| EpochRow {
                k: e.k,
                j_r: e.j_r,
                j_c: e.j_c,
                lambda: e.lambda,
                burn_in_hit: e.burn_in_hit,
                samples_used: e.samples_used,
            })
            .collect();
        Self {
            seed,
            steps,
            epochs,
            j_r_star,
            final_j_r: out.final_j_r,
            final_j_c: out.final_j_c,
            final_lambda: out.final_lambda,
            lagrangian_decreases: out.lagrangian_decreases.len(),
        }
    }

    pub fn realized_t(&self) -> usize {
        self.steps.len()
    }

    /// `Σ_{t<T} (J_r* − r_t)`
    pub fn regret(&self) -> f64 {
        regret_of(self.j_r_star, self.steps.iter().map(|r| r.reward))
    }

    /// `Σ_k −J_c(θ_k)`
    pub fn violation_signed(&self) -> f64 {
        self.epochs.iter().map(|e| -e.j_c).sum()
    }

    /// `Σ_k max(0, −J_c(θ_k))`
    pub fn violation_clipped(&self) -> f64 {
        self.epochs.iter().map(|e| (-e.j_c).max(0.0)).sum()
    }

    /// `Σ_k n_k max(0, −J_c(θ_k))`, weighting each epoch by its samples.
    pub fn step_violation_clipped(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.samples_used as f64 * (-e.j_c).max(0.0))
            .sum()
    }

    /// `−Σ_t c_t` from the realized costs.
    pub fn empirical_cost_violation(&self) -> f64 {
        -self.steps.iter().map(|r| r.cost).sum::<f64>()
    }

    pub fn burn_in_failures(&self) -> usize {
        self.epochs.iter().filter(|e| !e.burn_in_hit).count()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join(format!("steps_seed{}.csv", self.seed)), &self.steps)?;
        write_rows(&dir.join(format!("epochs_seed{}.csv", self.seed)), &self.epochs)
    }

    pub fn summary(&self, track_burn_in: bool) -> SeedSummary {
        SeedSummary {
            seed: self.seed,
            realized_t: self.realized_t(),
            epochs: self.epochs.len(),
            final_j_r: self.final_j_r,
            final_j_c: self.final_j_c,
            final_lambda: self.final_lambda,
            regret: self.regret(),
            violation_signed: self.violation_signed(),
            violation_clipped: self.violation_clipped(),
            step_violation_clipped: self.step_violation_clipped(),
            empirical_cost_violation: self.empirical_cost_violation(),
            burn_in_failures: track_burn_in.then(|| self.burn_in_failures()),
            lagrangian_decreases: self.lagrangian_decreases,
        }
    }
}

pub fn regret_of(j_r_star: f64, rewards: impl IntoIterator<Item = f64>) -> f64 {
    rewards.into_iter().map(|r| j_r_star - r).sum()
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a step file back.
pub fn read_steps(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub realized_t: usize,
    pub epochs: usize,
    pub final_j_r: f64,
    pub final_j_c: f64,
    pub final_lambda: f64,
    pub regret: f64,
    pub violation_signed: f64,
    pub violation_clipped: f64,
    pub step_violation_clipped: f64,
    pub empirical_cost_violation: f64,
    pub burn_in_failures: Option<usize>,
    pub lagrangian_decreases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub env: String,
    pub j_r_star: f64,
    /// Resolved parameters; `seed` is the first seed.
    pub config: AlgoConfig,
    pub seeds: Vec<SeedSummary>,
    pub mean_regret: f64,
    pub mean_violation_signed: f64,
    pub mean_violation_clipped: f64,
    pub mean_final_j_r: f64,
    pub mean_final_j_c: f64,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

impl ExperimentSummary {
    fn new(env: String, j_r_star: f64, config: AlgoConfig, seeds: Vec<SeedSummary>) -> Self {
        let m = |f: fn(&SeedSummary) -> f64| mean(seeds.iter().map(f));
        Self {
            mean_regret: m(|s| s.regret),
            mean_violation_signed: m(|s| s.violation_signed),
            mean_violation_clipped: m(|s| s.violation_clipped),
            mean_final_j_r: m(|s| s.final_j_r),
            mean_final_j_c: m(|s| s.final_j_c),
            env,
            j_r_star,
            config,
            seeds,
        }
    }
}

/// Traces plus summary of one experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub traces: Vec<RegretTrace>,
    pub summary: ExperimentSummary,
}

fn one_hot_pair(model: &CmdpModel<f64>) -> (FeatureMap<f64>, FeatureMap<f64>) {
    let n = model.n_states();
    (FeatureMap::one_hot(n, Signal::Reward), FeatureMap::one_hot(n, Signal::Cost))
}

/// Every seed of `config`, in parallel, without touching the filesystem.
fn execute(config: &RunConfig) -> Result<Experiment> {
    let model = config.build_model()?;
    let (fr, fc) = one_hot_pair(&model);
    let base = resolve_config(&model, &fr, &fc, &config.settings())?;
    let j_r_star = solve_cmdp_lp(&model)?.j_r_star;
    let traces = config
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let cfg = AlgoConfig { seed, ..base.clone() };
            run(&model, &fr, &fc, &cfg).map(|out| RegretTrace::from_output(seed, j_r_star, &out))
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = traces.iter().map(|t| t.summary(config.debug.track_burn_in)).collect();
    let summary = ExperimentSummary::new(config.env_name(), j_r_star, base, seeds);
    Ok(Experiment { traces, summary })
}

fn write_experiment(exp: &Experiment, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in &exp.traces {
        t.write_csv(dir)?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&exp.summary)?)?;
    Ok(())
}

/// Runs every seed and, when `config.out_dir` is set, writes
/// `steps_seed{n}.csv`, `epochs_seed{n}.csv` and `summary.json` there.
pub fn run_experiment(config: &RunConfig) -> Result<Experiment> {
    let exp = with_pool(|| execute(config))??;
    if let Some(dir) = &config.out_dir {
        write_experiment(&exp, dir)?;
    }
    Ok(exp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub regret: f64,
    pub violation: f64,
    pub violation_signed: f64,
    pub final_j_r: f64,
    pub final_j_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub env: String,
    pub rows: Vec<SweepRow>,
    pub regret_fit: Option<ExponentFit>,
    pub violation_fit: Option<ExponentFit>,
}

impl SweepTable {
    pub fn regret_points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t as f64, r.regret)).collect()
    }

    pub fn violation_points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t as f64, r.violation)).collect()
    }
}

/// Runs `base` once per horizon in `ts` and tabulates seed means. With an
/// output directory each horizon gets its own `T{t}` subdirectory, plus
/// `sweep.csv` and `sweep.json` at the top.
pub fn sweep(base: &RunConfig, ts: &[usize]) -> Result<SweepTable> {
    if ts.is_empty() {
        return Err(Error::Config("sweep needs at least one horizon".into()));
    }
    if let Some(&t) = ts.iter().find(|t| !t.is_power_of_two()) {
        return Err(Error::Config(format!("sweep horizon {t} is not a power of two")));
    }
    if ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep horizons must be strictly ascending".into()));
    }
    let configs: Vec<RunConfig> = ts
        .iter()
        .map(|&t| {
            let mut c = base.clone();
            c.algo.total_steps = t;
            c.out_dir = base.out_dir.as_ref().map(|d| d.join(format!("T{t}")));
            c
        })
        .collect();
    let exps = with_pool(|| configs.par_iter().map(execute).collect::<Result<Vec<_>>>())??;
    let rows: Vec<SweepRow> = ts
        .iter()
        .zip(&exps)
        .map(|(&t, e)| SweepRow {
            t,
            regret: e.summary.mean_regret,
            violation: e.summary.mean_violation_clipped,
            violation_signed: e.summary.mean_violation_signed,
            final_j_r: e.summary.mean_final_j_r,
            final_j_c: e.summary.mean_final_j_c,
        })
        .collect();
    let mut table = SweepTable {
        env: base.env_name(),
        rows,
        regret_fit: None,
        violation_fit: None,
    };
    table.regret_fit = fit_exponent(&table.regret_points()).ok();
    table.violation_fit = fit_exponent(&table.violation_points()).ok();
    if let Some(dir) = &base.out_dir {
        for (c, e) in configs.iter().zip(&exps) {
            write_experiment(e, c.out_dir.as_ref().expect("set above"))?;
        }
        write_rows(&dir.join("sweep.csv"), &table.rows)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&table)?)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let ok = r#"
            n_seeds = 2
            [env]
            name = "FunnelRing"
            p = 0.5
            k = 3
            [algo]
            total_steps = 1024
        "#;
        let cfg = RunConfig::from_toml(ok).unwrap();
        assert_eq!(cfg.env, Some(EnvSpec::FunnelRing { p: 0.5, k: 3 }));
        assert!(cfg.debug.track_burn_in);
        assert!(RunConfig::from_toml(&format!("bogus = 1\n{ok}")).is_err());
        assert!(RunConfig::from_toml(&ok.replace("total_steps", "total_stepz")).is_err());
        assert!(RunConfig::from_toml(&ok.replace("k = 3", "k = 3\nq = 1")).is_err());
        let json = r#"{"env": {"name": "TwoRing"}, "algo": {"total_steps": 64}, "debug": {"exact": true}}"#;
        let cfg = RunConfig::from_json(json).unwrap();
        assert_eq!(cfg.settings().mode, EstimatorMode::Exact);
    }

    #[test]
    fn exactly_one_environment_source() {
        let mut cfg = RunConfig::new(EnvSpec::TwoRing, AlgoSettings::new(64));
        assert!(cfg.validate().is_ok());
        cfg.model = Some("m.json".into());
        assert!(cfg.validate().is_err());
        cfg.env = None;
        assert!(cfg.validate().is_ok());
        cfg.model = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_bookkeeping() {
        let rows = |rs: &[f64]| {
            rs.iter()
                .enumerate()
                .map(|(t, &r)| StepRow {
                    t,
                    state: 0,
                    action: 0,
                    reward: r,
                    cost: -r,
                })
                .collect()
        };
        let ep = |k, j_c, hit| EpochRow {
            k,
            j_r: 0.0,
            j_c,
            lambda: 0.0,
            burn_in_hit: hit,
            samples_used: 2,
        };
        let tr = RegretTrace {
            seed: 0,
            steps: rows(&[1.0, 0.0, 0.5, 0.5]),
            epochs: vec![ep(0, -0.5, true), ep(1, 0.25, false)],
            j_r_star: 1.0,
            final_j_r: 0.0,
            final_j_c: 0.0,
            final_lambda: 0.0,
            lagrangian_decreases: 0,
        };
        assert_eq!(tr.regret(), 2.0);
        assert_eq!(tr.violation_signed(), 0.25);
        assert_eq!(tr.violation_clipped(), 0.5);
        assert_eq!(tr.step_violation_clipped(), 1.0);
        assert_eq!(tr.empirical_cost_violation(), 2.0);
        assert_eq!(tr.burn_in_failures(), 1);
        assert_eq!(tr.summary(false).burn_in_failures, None);
    }

    #[test]
    fn sweep_rejects_bad_horizons() {
        let cfg = RunConfig::new(EnvSpec::TwoRing, AlgoSettings::new(64));
        assert!(sweep(&cfg, &[]).is_err());
        assert!(sweep(&cfg, &[64, 100]).is_err());
        assert!(sweep(&cfg, &[128, 64]).is_err());
    }
}
