//! Barrier-escape Monte Carlo: first-passage times of noisy Adam and InvAdam
//! dynamics out of a quadratic well of tunable sharpness.

use crate::artifact::{csv_writer, num};
use crate::landscape::NoiseModel;
use crate::optim::{self, OptimError, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng::{self, streams};
use crate::stats::{self, linear_fit, LinearFit};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EscapeError {
    #[error("infeasible barrier: {reason}; feasible range is {range}")]
    InfeasibleBarrier { reason: String, range: String },
    #[error("invalid escape run: {0}")]
    InvalidRun(String),
    #[error("scaling fit needs at least 4 grid points, got {0}")]
    TooFewPoints(usize),
    #[error("censoring rate >= 0.5 at H_phi = {0:?}")]
    ExcessiveCensoring(Vec<f64>),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Smallest and largest allowed `H_phi / H_chi`.
pub const CURVATURE_RATIO_RANGE: (f64, f64) = (1e-3, 1e3);

/// Escape is declared past `χ + ESCAPE_MARGIN·(χ − φ)`.
pub const ESCAPE_MARGIN: f64 = 0.05;

/// A 1-D well at `φ = 0` of curvature `H_phi`, joined C¹ to an inverted parabola of
/// curvature `H_chi` peaking at the saddle `χ` with height `delta_l`. Left of the
/// junction the well parabola continues indefinitely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierPotential {
    pub h_phi: f64,
    pub delta_l: f64,
    pub h_chi: f64,
    pub junction: f64,
    pub saddle: f64,
}

pub fn make_barrier(h_phi: f64, delta_l: f64, h_chi: f64) -> Result<BarrierPotential, EscapeError> {
    let range = || {
        format!(
            "H_phi, delta_L, H_chi finite and > 0 with {} <= H_phi/H_chi <= {}",
            CURVATURE_RATIO_RANGE.0, CURVATURE_RATIO_RANGE.1
        )
    };
    for (name, v) in [("H_phi", h_phi), ("delta_L", delta_l), ("H_chi", h_chi)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(EscapeError::InfeasibleBarrier {
                reason: format!("{name} = {v}"),
                range: range(),
            });
        }
    }
    let ratio = h_phi / h_chi;
    if !(CURVATURE_RATIO_RANGE.0..=CURVATURE_RATIO_RANGE.1).contains(&ratio) {
        return Err(EscapeError::InfeasibleBarrier {
            reason: format!("H_phi/H_chi = {ratio}"),
            range: range(),
        });
    }
    // ½Hφ θj² + ½Hφ² θj² / Hχ = ΔL, from matching value and slope at the junction
    let junction = (2.0 * delta_l / (h_phi * (1.0 + ratio))).sqrt();
    Ok(BarrierPotential {
        h_phi,
        delta_l,
        h_chi,
        junction,
        saddle: junction * (1.0 + ratio),
    })
}

impl BarrierPotential {
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.junction {
            0.5 * self.h_phi * x * x
        } else {
            let d = x - self.saddle;
            self.delta_l - 0.5 * self.h_chi * d * d
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        if x <= self.junction {
            self.h_phi * x
        } else {
            -self.h_chi * (x - self.saddle)
        }
    }

    /// Position whose crossing counts as an escape.
    pub fn escape_threshold(&self) -> f64 {
        self.saddle + ESCAPE_MARGIN * self.saddle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Adam,
    InvAdam,
}

impl Dynamics {
    pub const ALL: [Dynamics; 2] = [Dynamics::Adam, Dynamics::InvAdam];

    pub fn kind(self) -> OptimizerKind {
        match self {
            Dynamics::Adam => OptimizerKind::Adam,
            Dynamics::InvAdam => OptimizerKind::InvAdam,
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().name()
    }

    /// Exponent of `H_phi` in the log escape-time regressor.
    pub fn scaling_power(self) -> f64 {
        match self {
            Dynamics::Adam => -0.5,
            Dynamics::InvAdam => -1.5,
        }
    }
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Dynamics::Adam),
            "invadam" => Ok(Dynamics::InvAdam),
            other => Err(format!("unknown dynamics `{other}`, expected adam or invadam")),
        }
    }
}

/// First-passage step, or `None` when the trial hit `max_steps` first.
pub type Outcome = Option<u64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStats {
    pub h_phi: f64,
    pub dynamics: Dynamics,
    pub trials: usize,
    pub max_steps: u64,
    /// Indexed by trial; `null` marks a censored trial.
    pub escape_steps: Vec<Outcome>,
    /// Over uncensored trials only.
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub censoring_rate: f64,
    /// Set when more than half the trials are censored.
    pub median_unreliable: bool,
    /// Set when the run had no noise, so no escape was possible.
    pub zero_noise: bool,
}

impl EscapeStats {
    pub fn from_outcomes(
        h_phi: f64,
        dynamics: Dynamics,
        max_steps: u64,
        outcomes: Vec<Outcome>,
        zero_noise: bool,
    ) -> Self {
        let mut done: Vec<f64> = outcomes.iter().flatten().map(|&s| s as f64).collect();
        // sorted input makes the summaries independent of trial order
        done.sort_by(f64::total_cmp);
        let trials = outcomes.len();
        let censoring_rate = if trials == 0 {
            0.0
        } else {
            (trials - done.len()) as f64 / trials as f64
        };
        Self {
            h_phi,
            dynamics,
            trials,
            max_steps,
            escape_steps: outcomes,
            median: (!done.is_empty()).then(|| stats::median(&done)),
            mean: (!done.is_empty()).then(|| stats::mean(&done)),
            censoring_rate,
            median_unreliable: censoring_rate > 0.5,
            zero_noise,
        }
    }
}

/// Settings for one escape cell, minus the potential and dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeRun {
    pub noise: NoiseModel,
    pub max_steps: u64,
    pub trials: usize,
    pub seed: u64,
}

/// One trial from `φ`. Noise is drawn with the curvature frozen at `H_phi` and added to
/// the gradient before the moment updates.
pub fn run_trial(
    potential: &BarrierPotential,
    cfg: &OptimizerConfig,
    noise: &NoiseModel,
    max_steps: u64,
    seed: u64,
    trial: u64,
) -> Result<Outcome, EscapeError> {
    let mut rng = rng::stream(seed, streams::TRIAL_BASE + trial);
    let mut state = OptimizerState::new(1);
    let mut x = [0.0];
    let threshold = potential.escape_threshold();
    for t in 1..=max_steps {
        let g = potential.grad(x[0]) + noise.sample_1d(&mut rng, potential.h_phi);
        optim::step(&mut state, &mut x, &[g], cfg, t - 1)?;
        if x[0] > threshold {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

pub fn run_escape(
    potential: &BarrierPotential,
    dynamics: Dynamics,
    cfg: &OptimizerConfig,
    run: &EscapeRun,
) -> Result<EscapeStats, EscapeError> {
    if run.trials < 10 {
        return Err(EscapeError::InvalidRun(format!(
            "need at least 10 trials, got {}",
            run.trials
        )));
    }
    if run.max_steps < 1000 {
        return Err(EscapeError::InvalidRun(format!(
            "max_steps must be at least 1000, got {}",
            run.max_steps
        )));
    }
    run.noise.validate().map_err(EscapeError::InvalidRun)?;
    let cfg = OptimizerConfig {
        kind: dynamics.kind(),
        ..*cfg
    };
    cfg.validate()?;
    let outcomes = (0..run.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(potential, &cfg, &run.noise, run.max_steps, run.seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EscapeStats::from_outcomes(
        potential.h_phi,
        dynamics,
        run.max_steps,
        outcomes,
        run.noise.is_none() || run.noise.sigma == 0.0,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub dynamics: Dynamics,
    /// Regressor is `H_phi^power`.
    pub power: f64,
    pub fit: LinearFit,
}

/// Least squares of `log(median)` against `H_phi^power` with `power` set by the dynamics.
pub fn scaling_fit(cells: &[EscapeStats]) -> Result<ScalingFit, EscapeError> {
    if cells.len() < 4 {
        return Err(EscapeError::TooFewPoints(cells.len()));
    }
    let dynamics = cells[0].dynamics;
    if cells.iter().any(|c| c.dynamics != dynamics) {
        return Err(EscapeError::InvalidRun("scaling fit mixes dynamics".into()));
    }
    let bad: Vec<f64> = cells
        .iter()
        .filter(|c| c.censoring_rate >= 0.5 || c.median.is_none())
        .map(|c| c.h_phi)
        .collect();
    if !bad.is_empty() {
        return Err(EscapeError::ExcessiveCensoring(bad));
    }
    let power = dynamics.scaling_power();
    let x: Vec<f64> = cells.iter().map(|c| c.h_phi.powf(power)).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.median.unwrap_or(f64::NAN).ln()).collect();
    Ok(ScalingFit {
        dynamics,
        power,
        fit: linear_fit(&x, &y),
    })
}

/// Pairs Adam and InvAdam cells by sharpness, sorted by `H_phi`.
fn paired<'a>(
    adam: &'a [EscapeStats],
    inv: &'a [EscapeStats],
) -> Result<Vec<(&'a EscapeStats, &'a EscapeStats)>, EscapeError> {
    if adam.len() != inv.len() || adam.is_empty() {
        return Err(EscapeError::InvalidRun("Adam and InvAdam grids differ".into()));
    }
    let mut pairs = Vec::with_capacity(adam.len());
    for a in adam {
        let b = inv
            .iter()
            .find(|b| b.h_phi == a.h_phi)
            .ok_or_else(|| EscapeError::InvalidRun(format!("no InvAdam cell at H_phi = {}", a.h_phi)))?;
        pairs.push((a, b));
    }
    pairs.sort_by(|x, y| x.0.h_phi.total_cmp(&y.0.h_phi));
    Ok(pairs)
}

fn uncensored_median(steps: &[Outcome]) -> f64 {
    let done: Vec<f64> = steps.iter().flatten().map(|&s| s as f64).collect();
    stats::median(&done)
}

fn resample<R: Rng>(rng: &mut R, steps: &[Outcome]) -> Vec<Outcome> {
    (0..steps.len())
        .map(|_| steps[rng.random_range(0..steps.len())])
        .collect()
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[1] <= w[0])
}

fn log_log_slope(h: &[f64], medians: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = medians.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y).slope
}

/// Sharpness-ordering checks with trial-level bootstrap confidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub h_phi: Vec<f64>,
    /// `median_invadam / median_adam` per sharpness.
    pub ratios: Vec<f64>,
    pub ratio_non_increasing: bool,
    /// Fraction of bootstrap replicates in which the ratio sequence is non-increasing.
    pub ratio_confidence: f64,
    /// Slopes of log median against log `H_phi`.
    pub adam_decay_slope: f64,
    pub invadam_decay_slope: f64,
    /// Fraction of replicates in which InvAdam's slope is at most Adam's.
    pub decay_confidence: f64,
    pub replicates: usize,
}

pub fn ordering_report(
    adam: &[EscapeStats],
    inv: &[EscapeStats],
    replicates: usize,
    seed: u64,
) -> Result<OrderingReport, EscapeError> {
    if replicates == 0 {
        return Err(EscapeError::InvalidRun("need at least one bootstrap replicate".into()));
    }
    let pairs = paired(adam, inv)?;
    let h: Vec<f64> = pairs.iter().map(|p| p.0.h_phi).collect();
    let evaluate = |a: &[Vec<Outcome>], b: &[Vec<Outcome>]| {
        let ma: Vec<f64> = a.iter().map(|s| uncensored_median(s)).collect();
        let mb: Vec<f64> = b.iter().map(|s| uncensored_median(s)).collect();
        let ratios: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| y / x).collect();
        (ratios, log_log_slope(&h, &ma), log_log_slope(&h, &mb))
    };
    let base_a: Vec<Vec<Outcome>> = pairs.iter().map(|p| p.0.escape_steps.clone()).collect();
    let base_b: Vec<Vec<Outcome>> = pairs.iter().map(|p| p.1.escape_steps.clone()).collect();
    let (ratios, adam_slope, inv_slope) = evaluate(&base_a, &base_b);

    let mut rng = rng::stream(seed, streams::BOOTSTRAP);
    let mut ratio_hits = 0usize;
    let mut decay_hits = 0usize;
    for _ in 0..replicates {
        let ra: Vec<Vec<Outcome>> = base_a.iter().map(|s| resample(&mut rng, s)).collect();
        let rb: Vec<Vec<Outcome>> = base_b.iter().map(|s| resample(&mut rng, s)).collect();
        let (r, sa, sb) = evaluate(&ra, &rb);
        ratio_hits += usize::from(non_increasing(&r));
        decay_hits += usize::from(sb <= sa);
    }
    Ok(OrderingReport {
        h_phi: h,
        ratio_non_increasing: non_increasing(&ratios),
        ratios,
        ratio_confidence: ratio_hits as f64 / replicates as f64,
        adam_decay_slope: adam_slope,
        invadam_decay_slope: inv_slope,
        decay_confidence: decay_hits as f64 / replicates as f64,
        replicates,
    })
}

pub const SUMMARY_HEADER: [&str; 5] = ["H_phi", "dynamics", "median_steps", "mean_steps", "censoring_rate"];

/// One row per cell; an absent median or mean is written as `nan`.
pub fn write_summary<W: Write>(w: W, cells: &[EscapeStats]) -> csv::Result<()> {
    let mut w = csv_writer(w);
    w.write_record(SUMMARY_HEADER)?;
    for c in cells {
        w.write_record([
            num(c.h_phi),
            c.dynamics.name().to_string(),
            num(c.median.unwrap_or(f64::NAN)),
            num(c.mean.unwrap_or(f64::NAN)),
            num(c.censoring_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_curvature(b: &BarrierPotential, x: f64) -> f64 {
        let h = 1e-4 * b.junction;
        (b.eval(x + h) - 2.0 * b.eval(x) + b.eval(x - h)) / (h * h)
    }

    #[test]
    fn barrier_matches_its_parameters() {
        for (hp, dl, hc) in [(1.0, 0.5, 1.0), (8.0, 0.05, 4.0), (0.1, 2.0, 30.0)] {
            let b = make_barrier(hp, dl, hc).unwrap();
            assert_eq!(b.grad(0.0), 0.0);
            assert!((fd_curvature(&b, 0.0) - hp).abs() / hp <= 1e-3);
            assert!(((b.eval(b.saddle) - b.eval(0.0)) - dl).abs() / dl <= 1e-3);
            // value and slope agree on both sides of the junction
            let j = b.junction;
            let left = 0.5 * hp * j * j;
            let right = dl - 0.5 * hc * (j - b.saddle).powi(2);
            assert!((left - right).abs() <= 1e-12 * dl.max(1.0));
            assert!((hp * j + hc * (j - b.saddle)).abs() <= 1e-12 * (hp * j).max(1.0));
            assert!(b.grad(b.saddle).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_barriers_name_the_range() {
        assert!(matches!(
            make_barrier(0.0, 1.0, 1.0),
            Err(EscapeError::InfeasibleBarrier { .. })
        ));
        assert!(make_barrier(1.0, -1.0, 1.0).is_err());
        let err = make_barrier(1e4, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("H_phi/H_chi"));
    }

    fn quick_run(noise: NoiseModel, trials: usize) -> EscapeRun {
        EscapeRun {
            noise,
            max_steps: 1000,
            trials,
            seed: 0,
        }
    }

    #[test]
    fn zero_noise_never_escapes() {
        let b = make_barrier(4.0, 0.05, 4.0).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.05);
        for d in Dynamics::ALL {
            let s = run_escape(&b, d, &cfg, &quick_run(NoiseModel::none(), 10)).unwrap();
            assert_eq!(s.censoring_rate, 1.0);
            assert!(s.zero_noise && s.median_unreliable && s.median.is_none());
        }
    }

    #[test]
    fn preconditions() {
        let b = make_barrier(1.0, 0.05, 4.0).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.05);
        assert!(run_escape(&b, Dynamics::Adam, &cfg, &quick_run(NoiseModel::none(), 9)).is_err());
        let mut r = quick_run(NoiseModel::none(), 10);
        r.max_steps = 999;
        assert!(run_escape(&b, Dynamics::Adam, &cfg, &r).is_err());
    }

    #[test]
    fn trials_are_reproducible_and_order_free() {
        let b = make_barrier(8.0, 0.05, 4.0).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.05);
        let run = quick_run(NoiseModel::curvature_scaled(1.0, 2), 20);
        let a = run_escape(&b, Dynamics::InvAdam, &cfg, &run).unwrap();
        assert_eq!(a, run_escape(&b, Dynamics::InvAdam, &cfg, &run).unwrap());
        assert!(a.censoring_rate < 1.0);
        let mut shuffled = a.escape_steps.clone();
        shuffled.reverse();
        let b2 = EscapeStats::from_outcomes(a.h_phi, a.dynamics, a.max_steps, shuffled, false);
        assert_eq!(
            (a.median, a.mean, a.censoring_rate),
            (b2.median, b2.mean, b2.censoring_rate)
        );
    }

    #[test]
    fn stats_flags() {
        let s = EscapeStats::from_outcomes(1.0, Dynamics::Adam, 100, vec![Some(4), None, None, Some(2)], false);
        assert_eq!(s.censoring_rate, 0.5);
        assert_eq!(s.median, Some(3.0));
        assert!(!s.median_unreliable);
        let s = EscapeStats::from_outcomes(1.0, Dynamics::Adam, 100, vec![Some(4), None, None], false);
        assert!(s.median_unreliable);
    }

    fn synthetic(dynamics: Dynamics, c: f64, grid: &[f64]) -> Vec<EscapeStats> {
        grid.iter()
            .map(|&h| {
                let tau = (c * h.powf(dynamics.scaling_power())).exp().round() as u64;
                EscapeStats::from_outcomes(h, dynamics, u64::MAX, vec![Some(tau); 11], false)
            })
            .collect()
    }

    #[test]
    fn scaling_fit_on_exact_data() {
        let grid = [1.0, 2.0, 4.0, 8.0];
        let cells: Vec<EscapeStats> = synthetic(Dynamics::InvAdam, 9.0, &grid)
            .into_iter()
            .map(|mut c| {
                c.median = Some((9.0 * c.h_phi.powf(-1.5)).exp());
                c
            })
            .collect();
        let fit = scaling_fit(&cells).unwrap();
        assert!((fit.fit.slope - 9.0).abs() <= 1e-6, "{:?}", fit.fit);
        assert!((fit.fit.r_squared - 1.0).abs() <= 1e-9);
        assert!(matches!(scaling_fit(&cells[..3]), Err(EscapeError::TooFewPoints(3))));
    }

    #[test]
    fn scaling_fit_names_censored_points() {
        let mut cells = synthetic(Dynamics::Adam, 3.0, &[1.0, 2.0, 4.0, 8.0]);
        cells[0] = EscapeStats::from_outcomes(1.0, Dynamics::Adam, 10, vec![None; 10], false);
        assert_eq!(
            scaling_fit(&cells).unwrap_err(),
            EscapeError::ExcessiveCensoring(vec![1.0])
        );
    }

    #[test]
    fn ordering_on_separated_synthetic_cells() {
        let grid = [1.0, 2.0, 4.0, 8.0];
        let adam = synthetic(Dynamics::Adam, 6.0, &grid);
        let inv = synthetic(Dynamics::InvAdam, 9.0, &grid);
        let r = ordering_report(&adam, &inv, 50, 0).unwrap();
        assert!(r.ratio_non_increasing);
        assert_eq!(r.ratio_confidence, 1.0);
        assert!(r.invadam_decay_slope < r.adam_decay_slope);
        assert!(ordering_report(&adam, &inv[..3], 50, 0).is_err());
    }

    #[test]
    fn summary_csv() {
        let cells = vec![
            EscapeStats::from_outcomes(1.0, Dynamics::Adam, 10, vec![Some(2), Some(4)], false),
            EscapeStats::from_outcomes(1.0, Dynamics::InvAdam, 10, vec![None, None], false),
        ];
        let mut buf = Vec::new();
        write_summary(&mut buf, &cells).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "H_phi,dynamics,median_steps,mean_steps,censoring_rate\n1.0,adam,3.0,3.0,0.0\n1.0,invadam,NaN,NaN,1.0\n"
        );
    }
}
