//! TOML experiment configs. Every table rejects unknown keys, and serde's message
//! lists the accepted ones.

use crate::analysis::{zeta_grid, AnalysisOptions};
use crate::landscape::{NoiseModel, Point, TwoBasinParams};
use crate::nn::{make_spirals, make_two_moons, Activation, Dataset, NnError};
use crate::optim::{OptimError, OptimizerConfig, OptimizerKind, Schedule};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

impl From<OptimError> for ConfigError {
    fn from(e: OptimError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Parses a config, treating an empty document as all defaults.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).expect("configs serialize to TOML")
}

/// Parses `a..b` (inclusive) or a single integer.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = || ConfigError::Invalid(format!("seed range `{s}` must look like `a..b` or `n`"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(ConfigError::Invalid(format!("seed range `{s}` is empty")));
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![s.parse().map_err(|_| bad())?])
    }
}

fn check_seeds(seeds: &[u64]) -> Result<(), ConfigError> {
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds must not be empty".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ConfigError::Invalid(format!("duplicate seeds in {seeds:?}")));
    }
    Ok(())
}

/// One optimizer entry. `label` names its output files and defaults to the
/// optimizer name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub optimizer: OptimizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// DualAdam only. When absent, `train` may derive a linear rate from `switch_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            optimizer: kind,
            label: None,
            lr,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            weight_decay: 0.0,
            schedule: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.optimizer.name().to_string())
    }

    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            schedule: self.schedule.unwrap_or_default(),
        }
    }
}

fn check_optimizers(specs: &[OptimizerSpec]) -> Result<(), ConfigError> {
    if specs.is_empty() {
        return Err(ConfigError::Invalid(
            "at least one [[optimizers]] entry is required".into(),
        ));
    }
    let mut labels: Vec<String> = specs.iter().map(OptimizerSpec::label).collect();
    for l in &labels {
        if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ConfigError::Invalid(format!(
                "optimizer label `{l}` must be non-empty ASCII letters, digits, `-` or `_`"
            )));
        }
    }
    labels.sort();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        return Err(ConfigError::Invalid(format!(
            "optimizer label `{}` appears twice; set distinct `label`s",
            w[0]
        )));
    }
    for s in specs {
        s.to_config().validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeKind {
    TwoBasin,
    Eggholder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub landscape: LandscapeKind,
    pub two_basin: TwoBasinParams,
    /// Defaults to `(-0.9, 0.1)` on the two-basin landscape and `(0, 0)` on Eggholder.
    pub start: Option<Point>,
    pub steps: usize,
    pub basin_radius: f64,
    pub noise: NoiseModel,
    pub contour_nx: usize,
    pub contour_ny: usize,
    pub seeds: Vec<u64>,
    pub allow_divergence: bool,
    pub optimizers: Vec<OptimizerSpec>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            landscape: LandscapeKind::TwoBasin,
            two_basin: TwoBasinParams::default(),
            start: None,
            steps: 5000,
            basin_radius: 0.5,
            noise: NoiseModel::isotropic(0.05),
            contour_nx: 141,
            contour_ny: 61,
            seeds: vec![0],
            allow_divergence: false,
            // InvAdam's step scales with g·|g|, so it needs a far larger lr to move at all
            optimizers: vec![
                OptimizerSpec::new(OptimizerKind::Adam, 1e-2),
                OptimizerSpec::new(OptimizerKind::InvAdam, 10.0),
            ],
        }
    }
}

impl TrajectorySpec {
    pub fn start_point(&self) -> Point {
        self.start.unwrap_or(match self.landscape {
            LandscapeKind::TwoBasin => [-0.9, 0.1],
            LandscapeKind::Eggholder => [0.0, 0.0],
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_seeds(&self.seeds)?;
        check_optimizers(&self.optimizers)?;
        if self.steps == 0 {
            return Err(ConfigError::Invalid("steps must be at least 1".into()));
        }
        if !(self.basin_radius > 0.0) {
            return Err(ConfigError::Invalid("basin_radius must be positive".into()));
        }
        if self.contour_nx < 2 || self.contour_ny < 2 {
            return Err(ConfigError::Invalid(
                "contour_nx and contour_ny must be at least 2".into(),
            ));
        }
        self.noise.validate().map_err(ConfigError::Invalid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    Spirals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
    /// Spirals only.
    pub classes: usize,
    /// Fixed data seed; when absent each run uses its own seed.
    pub seed: Option<u64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::TwoMoons,
            n: 200,
            noise: 0.1,
            classes: 2,
            seed: None,
        }
    }
}

impl DataSpec {
    pub fn classes(&self) -> usize {
        match self.kind {
            DatasetKind::TwoMoons => 2,
            DatasetKind::Spirals => self.classes,
        }
    }

    pub fn build(&self, run_seed: u64) -> Result<Dataset, NnError> {
        let seed = self.seed.unwrap_or(run_seed);
        match self.kind {
            DatasetKind::TwoMoons => make_two_moons(self.n, self.noise, seed),
            DatasetKind::Spirals => make_spirals(self.n, self.classes, self.noise, seed),
        }
    }

    pub fn layer_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(self.classes());
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub data: DataSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: u64,
    pub batch_size: usize,
    /// DualAdam entries without a `schedule` get the linear rate that reaches
    /// `alpha = 0` after this fraction of all iterations. Without it they use the
    /// optimizer default.
    pub switch_fraction: Option<f64>,
    pub save_theta: bool,
    pub seeds: Vec<u64>,
    pub allow_divergence: bool,
    pub optimizers: Vec<OptimizerSpec>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            data: DataSpec::default(),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            epochs: 200,
            batch_size: 32,
            switch_fraction: Some(0.4),
            save_theta: true,
            seeds: vec![0],
            allow_divergence: false,
            optimizers: vec![
                OptimizerSpec::new(OptimizerKind::Adam, 1e-3),
                OptimizerSpec::new(OptimizerKind::DualAdam, 1e-3),
            ],
        }
    }
}

fn check_fraction(f: Option<f64>) -> Result<(), ConfigError> {
    match f {
        Some(f) if !(f > 0.0 && f <= 1.0) => Err(ConfigError::Invalid(format!(
            "switch_fraction must lie in (0, 1], got {f}"
        ))),
        _ => Ok(()),
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_seeds(&self.seeds)?;
        check_optimizers(&self.optimizers)?;
        check_fraction(self.switch_fraction)?;
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ConfigError::Invalid("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianModel {
    /// A saved parameter vector evaluated on a dataset split.
    Network,
    /// `½ θᵀ diag(quadratic_diag) θ` at `θ = 0`; a self-test with a known spectrum.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub top_k: usize,
    pub power_iters: usize,
    pub power_tol: f64,
    pub probes: usize,
    pub hvp_step: Option<f64>,
    pub zeta_half_width: f64,
    pub zeta_points: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        let d = AnalysisOptions::default();
        Self {
            top_k: d.top_k,
            power_iters: d.power_iters,
            power_tol: d.power_tol,
            probes: d.probes,
            hvp_step: d.hvp_step,
            zeta_half_width: 1.0,
            zeta_points: 41,
        }
    }
}

impl AnalysisSpec {
    pub fn options(&self, seed: u64) -> AnalysisOptions {
        AnalysisOptions {
            top_k: self.top_k,
            power_iters: self.power_iters,
            power_tol: self.power_tol,
            probes: self.probes,
            hvp_step: self.hvp_step,
            zetas: zeta_grid(self.zeta_half_width, self.zeta_points),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.zeta_points.is_multiple_of(2) {
            return Err(ConfigError::Invalid(
                "zeta_points must be odd so the grid contains 0".into(),
            ));
        }
        if !(self.zeta_half_width > 0.0) {
            return Err(ConfigError::Invalid("zeta_half_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianSpec {
    pub model: HessianModel,
    /// Saved θ (text, one value per line); relative paths resolve against the config file.
    pub theta: Option<PathBuf>,
    pub data: DataSpec,
    pub split: SplitKind,
    pub quadratic_diag: Vec<f64>,
    pub seeds: Vec<u64>,
    pub analysis: AnalysisSpec,
}

impl Default for HessianSpec {
    fn default() -> Self {
        Self {
            model: HessianModel::Network,
            theta: None,
            data: DataSpec::default(),
            split: SplitKind::Train,
            quadratic_diag: vec![3.0, 1.0],
            seeds: vec![0],
            analysis: AnalysisSpec::default(),
        }
    }
}

impl HessianSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.len() != 1 {
            return Err(ConfigError::Invalid("hessian takes exactly one seed".into()));
        }
        self.analysis.validate()?;
        match self.model {
            HessianModel::Network if self.theta.is_none() => {
                Err(ConfigError::Invalid("model = \"network\" needs a `theta` path".into()))
            }
            HessianModel::Quadratic if self.quadratic_diag.is_empty() => {
                Err(ConfigError::Invalid("quadratic_diag must not be empty".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscapeSpec {
    pub h_phi: Vec<f64>,
    pub delta_l: f64,
    pub h_chi: f64,
    pub dynamics: Vec<crate::escape::Dynamics>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub noise: NoiseModel,
    pub trials: usize,
    pub max_steps: u64,
    pub bootstrap: usize,
    pub seeds: Vec<u64>,
}

impl Default for EscapeSpec {
    fn default() -> Self {
        Self {
            h_phi: vec![1.0, 2.0, 4.0, 8.0],
            delta_l: 0.05,
            h_chi: 4.0,
            dynamics: crate::escape::Dynamics::ALL.to_vec(),
            lr: 0.05,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            noise: NoiseModel::curvature_scaled(1.0, 2),
            trials: 200,
            max_steps: 200_000,
            bootstrap: 1000,
            seeds: vec![0],
        }
    }
}

impl EscapeSpec {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            ..OptimizerConfig::new(OptimizerKind::Adam, self.lr)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.len() != 1 {
            return Err(ConfigError::Invalid("escape takes exactly one seed".into()));
        }
        if self.h_phi.is_empty() || self.dynamics.is_empty() {
            return Err(ConfigError::Invalid("h_phi and dynamics must not be empty".into()));
        }
        self.optimizer().validate()?;
        self.noise.validate().map_err(ConfigError::Invalid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Linear schedule over `rates`.
    Rate,
    /// Exponential bases and fixed switching epochs.
    Mechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub rates: Vec<f64>,
    pub bases: Vec<f64>,
    pub switch_epochs: Vec<u64>,
    /// Iteration budget the grid values refer to. Rates are multiplied and bases raised
    /// to `reference_iterations / T` for a run of `T` iterations; `0` disables this.
    pub reference_iterations: u64,
    /// Epoch budget the switching epochs refer to; `0` disables rescaling.
    pub reference_epochs: u64,
    pub data: DataSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seeds: Vec<u64>,
    pub allow_divergence: bool,
}

/// Switching rates of the reference ablation, `0` through `1e-4`.
pub const TABLE_RATES: [f64; 11] = [0.0, 1e-5, 2e-5, 3e-5, 4e-5, 5e-5, 6e-5, 7e-5, 8e-5, 9e-5, 1e-4];

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            mode: SweepMode::Rate,
            rates: TABLE_RATES.to_vec(),
            bases: vec![0.8, 0.9, 0.99],
            switch_epochs: vec![10, 30, 50],
            reference_iterations: 78_200,
            reference_epochs: 200,
            data: DataSpec {
                kind: DatasetKind::Spirals,
                n: 600,
                noise: 0.15,
                classes: 3,
                seed: None,
            },
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            epochs: 100,
            batch_size: 32,
            lr: 1e-2,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            seeds: (0..10).collect(),
            allow_divergence: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_seeds(&self.seeds)?;
        let empty = match self.mode {
            SweepMode::Rate => self.rates.is_empty(),
            SweepMode::Mechanism => self.bases.is_empty() && self.switch_epochs.is_empty(),
        };
        if empty {
            return Err(ConfigError::Invalid("sweep grid is empty".into()));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be at least 1".into()));
        }
        for &rate in &self.rates {
            Schedule::Linear { rate }.validate().map_err(ConfigError::Invalid)?;
        }
        for &base in &self.bases {
            Schedule::Exponential { base }
                .validate()
                .map_err(ConfigError::Invalid)?;
        }
        OptimizerConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            ..OptimizerConfig::default()
        }
        .validate()?;
        Ok(())
    }
}
