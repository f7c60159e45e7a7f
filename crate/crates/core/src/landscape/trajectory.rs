use super::{BasinLabel, KnownMinimum, Landscape, LandscapeError, NoiseModel, Point};
use crate::artifact::{csv_writer, num};
use crate::optim::{self, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub start: Point,
    pub max_steps: usize,
    pub seed: u64,
    /// A terminal point farther than this from every known minimum is classified as no basin.
    pub basin_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub loss: f64,
    pub alpha: f64,
    pub update_norm: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub landscape: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub start: Point,
    pub steps: Vec<TrajectoryStep>,
    pub terminal_basin: Option<BasinLabel>,
    pub diverged: bool,
    pub clamped_steps: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> Point {
        self.steps.last().map_or(self.start, |s| [s.x, s.y])
    }

    pub fn terminal_basin_name(&self) -> &'static str {
        match self.terminal_basin {
            Some(BasinLabel::Sharp) => "sharp",
            Some(BasinLabel::Flat) => "flat",
            None => "none",
        }
    }

    pub const CSV_HEADER: [&'static str; 6] = ["step", "x", "y", "loss", "alpha", "update_norm"];

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv_writer(w);
        w.write_record(Self::CSV_HEADER)?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                num(s.x),
                num(s.y),
                num(s.loss),
                num(s.alpha),
                num(s.update_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Metadata that accompanies the CSV.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "landscape": self.landscape,
            "optimizer": self.optimizer.name(),
            "seed": self.seed,
            "start": self.start,
            "terminal_basin": self.terminal_basin_name(),
            "diverged": self.diverged,
            "clamped_steps": self.clamped_steps,
        })
    }
}

/// Label of the nearest known minimum if it lies within `radius`, otherwise `None`.
pub fn classify_basin(p: Point, minima: &[KnownMinimum], radius: f64) -> Option<BasinLabel> {
    minima
        .iter()
        .map(|m| ((p[0] - m.position[0]).hypot(p[1] - m.position[1]), m.label))
        .filter(|(d, _)| d.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(d, _)| *d <= radius)
        .map(|(_, label)| label)
}

/// Runs one optimizer from `start` on noisy gradients of `landscape`.
///
/// Each step is treated as one full-batch epoch, so epoch-based schedules see
/// `epoch = t − 1`. Iterates leaving the domain are projected back and flagged.
pub fn run_trajectory(
    landscape: &Landscape,
    cfg: &OptimizerConfig,
    noise: &NoiseModel,
    params: &TrajectoryParams,
) -> Result<Trajectory, LandscapeError> {
    if params.max_steps == 0 {
        return Err(LandscapeError::InvalidRun("max_steps must be at least 1".into()));
    }
    if !landscape.domain.contains(params.start) {
        return Err(LandscapeError::InvalidRun(format!(
            "start {:?} lies outside the domain",
            params.start
        )));
    }
    cfg.validate()?;
    noise.validate().map_err(LandscapeError::InvalidRun)?;

    let mut rng = rng::stream(params.seed, rng::streams::NOISE);
    let mut state = OptimizerState::new(2);
    let mut p = params.start;
    let mut steps = Vec::with_capacity(params.max_steps);
    let mut diverged = false;
    let mut clamped_steps = 0;

    for t in 1..=params.max_steps as u64 {
        let mut g = landscape.grad(p)?;
        let n = noise.sample_2d(&mut rng, landscape, p)?;
        g[0] += n[0];
        g[1] += n[1];
        let report = optim::step(&mut state, &mut p, &g, cfg, t - 1)?;
        if !(p[0].is_finite() && p[1].is_finite()) {
            diverged = true;
            break;
        }
        let clamped = !landscape.domain.contains(p);
        if clamped {
            p = landscape.domain.clamp(p);
            clamped_steps += 1;
        }
        let loss = landscape.eval(p)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        steps.push(TrajectoryStep {
            t,
            x: p[0],
            y: p[1],
            loss,
            alpha: report.alpha,
            update_norm: report.update_norm,
            clamped,
        });
    }

    let terminal_basin = if diverged {
        None
    } else {
        let end = steps.last().map_or(params.start, |s| [s.x, s.y]);
        classify_basin(end, &landscape.known_minima, params.basin_radius)
    };
    Ok(Trajectory {
        landscape: landscape.name.clone(),
        optimizer: cfg.kind,
        seed: params.seed,
        start: params.start,
        steps,
        terminal_basin,
        diverged,
        clamped_steps,
    })
}
