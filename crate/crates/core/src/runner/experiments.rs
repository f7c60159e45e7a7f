//! One function per subcommand. The `*_runs` functions only compute; the `cmd_*`
//! functions also write artifacts into a run directory.

use super::{Outputs, RunError};
use crate::analysis::{self, flatness_slice, hutchinson_trace, hvp, top_eigs, HessianReport};
use crate::artifact::{csv_writer, num};
use crate::config::{
    DataSpec, EscapeSpec, HessianModel, HessianSpec, LandscapeKind, SplitKind, SweepMode, SweepSpec, TrainSpec,
    TrajectorySpec,
};
use crate::escape::{self, make_barrier, Dynamics, EscapeRun, EscapeStats};
use crate::landscape::{
    eggholder, run_trajectory, two_basin, Landscape, Trajectory, TrajectoryParams, TWO_BASIN_DOMAIN,
};
use crate::nn::{
    self, load_theta, rate_for_fraction, save_theta, total_iterations, Dataset, Network, TrainConfig, TrainRun,
};
use crate::optim::{OptimizerConfig, OptimizerKind, Schedule};
use crate::stats;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

pub const CONTOUR_HEADER: [&str; 3] = ["x", "y", "loss"];
pub const BASINS_HEADER: [&str; 6] = ["optimizer", "seed", "terminal_basin", "x", "y", "diverged"];
pub const TRAIN_SUMMARY_HEADER: [&str; 4] = ["optimizer", "mean_acc", "std_acc", "mean_gap"];
pub const SWEEP_RATE_HEADER: [&str; 5] = [
    "switching_rate",
    "train_loss_mean",
    "train_loss_std",
    "val_acc_mean",
    "val_acc_std",
];
pub const SWEEP_MECHANISM_HEADER: [&str; 6] = [
    "mechanism",
    "parameter",
    "train_loss_mean",
    "train_loss_std",
    "val_acc_mean",
    "val_acc_std",
];
pub const SWEEP_CELLS_HEADER: [&str; 7] = [
    "mechanism",
    "parameter",
    "effective_parameter",
    "seed",
    "train_loss",
    "val_acc",
    "diverged",
];

// ---------------------------------------------------------------- trajectory

pub fn build_landscape(spec: &TrajectorySpec) -> Result<Landscape, RunError> {
    Ok(match spec.landscape {
        LandscapeKind::TwoBasin => two_basin(spec.two_basin, TWO_BASIN_DOMAIN)?,
        LandscapeKind::Eggholder => eggholder()?,
    })
}

/// `(label, trajectory)` for every optimizer × seed, optimizers outermost.
pub fn trajectory_runs(spec: &TrajectorySpec) -> Result<Vec<(String, Trajectory)>, RunError> {
    let landscape = build_landscape(spec)?;
    let jobs: Vec<(usize, u64)> = (0..spec.optimizers.len())
        .flat_map(|i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let opt = &spec.optimizers[i];
            let params = TrajectoryParams {
                start: spec.start_point(),
                max_steps: spec.steps,
                seed,
                basin_radius: spec.basin_radius,
            };
            let t = run_trajectory(&landscape, &opt.to_config(), &spec.noise, &params)?;
            Ok((opt.label(), t))
        })
        .collect()
}

pub fn cmd_trajectory(spec: &TrajectorySpec, out: &mut Outputs) -> Result<(), RunError> {
    let landscape = build_landscape(spec)?;
    let runs = trajectory_runs(spec)?;
    for (label, t) in &runs {
        let stem = format!("trajectory_{label}_s{}", t.seed);
        out.csv(&format!("{stem}.csv"), |w| t.write_csv(w))?;
        out.json(&format!("{stem}.json"), &t.sidecar())?;
        if t.diverged {
            out.diverged(format!("{label} seed {}", t.seed), spec.allow_divergence);
        }
        if t.clamped_steps > 0 {
            out.warn(format!(
                "{label} seed {}: {} steps clamped to the domain",
                t.seed, t.clamped_steps
            ));
        }
    }
    let grid = landscape.contour_grid(spec.contour_nx, spec.contour_ny);
    out.csv("contour.csv", |w| {
        let mut w = csv_writer(w);
        w.write_record(CONTOUR_HEADER)?;
        for (x, y, l) in &grid {
            w.write_record([num(*x), num(*y), num(*l)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.csv("basins.csv", |w| {
        let mut w = csv_writer(w);
        w.write_record(BASINS_HEADER)?;
        for (label, t) in &runs {
            let [x, y] = t.terminal();
            w.write_record([
                label.clone(),
                t.seed.to_string(),
                t.terminal_basin_name().to_string(),
                num(x),
                num(y),
                t.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

// --------------------------------------------------------------------- train

/// Fills in the linear rate of DualAdam entries that have no explicit schedule.
/// Returns the resolved spec; running it again gives the same result.
pub fn resolve_train(spec: &TrainSpec) -> Result<TrainSpec, RunError> {
    let mut spec = spec.clone();
    let Some(fraction) = spec.switch_fraction else {
        return Ok(spec);
    };
    let data = spec.data.build(spec.seeds[0])?;
    let iters = total_iterations(data.split.train.len(), spec.batch_size, spec.epochs);
    for opt in &mut spec.optimizers {
        if opt.optimizer == OptimizerKind::DualAdam && opt.schedule.is_none() {
            opt.schedule = Some(Schedule::Linear {
                rate: rate_for_fraction(iters, fraction),
            });
        }
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct TrainCell {
    pub label: String,
    pub run: TrainRun,
}

fn train_one(
    data_spec: &DataSpec,
    hidden: &[usize],
    activation: nn::Activation,
    cfg: &OptimizerConfig,
    epochs: u64,
    batch_size: usize,
    seed: u64,
) -> Result<(Dataset, TrainRun), RunError> {
    let data = data_spec.build(seed)?;
    let net = Network::init(&data_spec.layer_sizes(hidden), activation, seed)?;
    let tc = TrainConfig {
        epochs,
        batch_size,
        seed,
    };
    let run = nn::train(&net, &data, cfg, &tc)?;
    Ok((data, run))
}

/// Every optimizer × seed of an already resolved spec, optimizers outermost.
pub fn train_runs(spec: &TrainSpec) -> Result<Vec<TrainCell>, RunError> {
    let jobs: Vec<(usize, u64)> = (0..spec.optimizers.len())
        .flat_map(|i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let opt = &spec.optimizers[i];
            let (_, run) = train_one(
                &spec.data,
                &spec.hidden,
                spec.activation,
                &opt.to_config(),
                spec.epochs,
                spec.batch_size,
                seed,
            )?;
            Ok(TrainCell {
                label: opt.label(),
                run,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummaryRow {
    pub optimizer: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_gap: f64,
}

/// Final-epoch test accuracy and generalization gap per optimizer, in config order.
pub fn train_summary(spec: &TrainSpec, cells: &[TrainCell]) -> Vec<TrainSummaryRow> {
    spec.optimizers
        .iter()
        .map(|o| {
            let label = o.label();
            let last: Vec<_> = cells
                .iter()
                .filter(|c| c.label == label)
                .map(|c| c.run.last().copied())
                .collect();
            let acc: Vec<f64> = last.iter().map(|r| r.map_or(f64::NAN, |r| r.test_acc)).collect();
            let gap: Vec<f64> = last.iter().map(|r| r.map_or(f64::NAN, |r| r.gen_gap)).collect();
            TrainSummaryRow {
                optimizer: label,
                mean_acc: stats::mean(&acc),
                std_acc: stats::std_dev(&acc),
                mean_gap: stats::mean(&gap),
            }
        })
        .collect()
}

pub fn cmd_train(spec: &TrainSpec, out: &mut Outputs) -> Result<(), RunError> {
    let cells = train_runs(spec)?;
    for c in &cells {
        let stem = format!("train_{}_s{}", c.label, c.run.seed);
        out.csv(&format!("{stem}.csv"), |w| c.run.write_csv(w))?;
        if spec.save_theta {
            let name = format!("theta_{stem}.txt");
            let side = save_theta(&out.path(&name), &c.run.header(), &c.run.theta)?;
            out.record(&name);
            out.record(&side.file_name().unwrap_or_default().to_string_lossy());
        }
        if c.run.diverged {
            out.diverged(format!("{} seed {}", c.label, c.run.seed), spec.allow_divergence);
        }
    }
    let rows = train_summary(spec, &cells);
    out.csv("summary.csv", |w| {
        let mut w = csv_writer(w);
        w.write_record(TRAIN_SUMMARY_HEADER)?;
        for r in &rows {
            w.write_record([r.optimizer.clone(), num(r.mean_acc), num(r.std_acc), num(r.mean_gap)])?;
        }
        w.flush()?;
        Ok(())
    })
}

// ------------------------------------------------------------------- hessian

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianOutput {
    pub model: HessianModel,
    pub num_params: usize,
    pub num_samples: usize,
    pub report: HessianReport,
    pub slice: analysis::FlatnessSlice,
}

fn pick_split(data: &Dataset, split: SplitKind) -> (Vec<f64>, Vec<usize>) {
    data.gather(match split {
        SplitKind::Train => &data.split.train,
        SplitKind::Val => &data.split.val,
        SplitKind::Test => &data.split.test,
    })
}

/// `theta` must already be resolved to a path that exists from the working directory.
pub fn hessian_run(spec: &HessianSpec) -> Result<HessianOutput, RunError> {
    let seed = spec.seeds[0];
    let opts = spec.analysis.options(seed);
    match spec.model {
        HessianModel::Network => {
            let path = spec
                .theta
                .as_deref()
                .ok_or_else(|| RunError::Invalid("model = \"network\" needs a `theta` path".into()))?;
            if !path.is_file() {
                return Err(RunError::Invalid(format!(
                    "saved parameters not found at {}",
                    path.display()
                )));
            }
            let (header, theta) = load_theta(path)?;
            let mut net = Network::zeros(&header.layer_sizes, header.activation)?;
            net.set_params(&theta)?;
            // the data the parameters were trained on, unless the config pins another seed
            let data = spec.data.build(header.seed)?;
            if data.dim != net.input_dim() || data.classes != net.classes() {
                return Err(RunError::Invalid(format!(
                    "saved network {:?} does not fit {:?} data with {} classes",
                    header.layer_sizes, spec.data.kind, data.classes
                )));
            }
            let (x, y) = pick_split(&data, spec.split);
            let (report, slice) = analysis::analyze_network(&net, &x, &y, &opts)?;
            Ok(HessianOutput {
                model: spec.model,
                num_params: net.num_params(),
                num_samples: y.len(),
                report,
                slice,
            })
        }
        HessianModel::Quadratic => {
            let d = &spec.quadratic_diag;
            let p = d.len();
            let theta = vec![0.0; p];
            let grad = |t: &[f64]| Ok(t.iter().zip(d).map(|(t, d)| d * t).collect());
            let h = opts.hvp_step.unwrap_or_else(|| analysis::default_hvp_step(&theta));
            let op = |v: &[f64]| hvp(grad, &theta, v, h);
            // the fixture is small, so report its whole spectrum
            let k = opts.top_k.max(p).min(10);
            let eigs = top_eigs(op, p, k, opts.power_iters, opts.power_tol, seed)?;
            let trace = hutchinson_trace(op, p, opts.probes, seed)?;
            let loss = |t: &[f64]| Ok(0.5 * t.iter().zip(d).map(|(t, d)| d * t * t).sum::<f64>());
            let slice = flatness_slice(loss, &theta, &opts.zetas, seed)?;
            Ok(HessianOutput {
                model: spec.model,
                num_params: p,
                num_samples: 0,
                report: HessianReport {
                    top_eigenvalues: eigs.values,
                    trace_estimate: trace.estimate,
                    trace_stderr: trace.stderr,
                    num_probes: trace.probes,
                    hvp_step: h,
                    converged: eigs.converged,
                },
                slice,
            })
        }
    }
}

pub fn cmd_hessian(spec: &HessianSpec, out: &mut Outputs) -> Result<(), RunError> {
    let res = hessian_run(spec)?;
    if !res.report.converged {
        out.warn("power iteration did not reach its tolerance".into());
    }
    out.json(
        "hessian.json",
        &serde_json::json!({
            "model": res.model,
            "num_params": res.num_params,
            "num_samples": res.num_samples,
            "report": res.report,
        }),
    )?;
    out.json("slice.json", &res.slice)?;
    out.csv("slice.csv", |w| res.slice.write_csv(w))
}

// -------------------------------------------------------------------- escape

/// Cells in dynamics-major order, each sorted by `H_phi` as configured.
pub fn escape_cells(spec: &EscapeSpec) -> Result<Vec<EscapeStats>, RunError> {
    let cfg = spec.optimizer();
    let run = EscapeRun {
        noise: spec.noise,
        max_steps: spec.max_steps,
        trials: spec.trials,
        seed: spec.seeds[0],
    };
    let mut cells = Vec::with_capacity(spec.dynamics.len() * spec.h_phi.len());
    for &d in &spec.dynamics {
        for &h in &spec.h_phi {
            let potential = make_barrier(h, spec.delta_l, spec.h_chi)?;
            cells.push(escape::run_escape(&potential, d, &cfg, &run)?);
        }
    }
    Ok(cells)
}

fn cells_of(cells: &[EscapeStats], d: Dynamics) -> Vec<EscapeStats> {
    cells.iter().filter(|c| c.dynamics == d).cloned().collect()
}

pub fn cmd_escape(spec: &EscapeSpec, out: &mut Outputs) -> Result<(), RunError> {
    let cells = escape_cells(spec)?;
    for c in &cells {
        out.json(&format!("escape_{}_H{}.json", c.dynamics.name(), c.h_phi), c)?;
        if c.median_unreliable && !c.zero_noise {
            out.warn(format!(
                "{} at H_phi = {}: {:.0}% of trials censored",
                c.dynamics.name(),
                c.h_phi,
                100.0 * c.censoring_rate
            ));
        }
    }
    out.csv("summary.csv", |w| escape::write_summary(w, &cells))?;

    let fits: Vec<serde_json::Value> = spec
        .dynamics
        .iter()
        .map(|&d| match escape::scaling_fit(&cells_of(&cells, d)) {
            Ok(f) => serde_json::json!({ "dynamics": d, "ok": true, "fit": f }),
            Err(e) => serde_json::json!({ "dynamics": d, "ok": false, "error": e.to_string() }),
        })
        .collect();
    let adam = cells_of(&cells, Dynamics::Adam);
    let inv = cells_of(&cells, Dynamics::InvAdam);
    let ordering = if adam.is_empty() || inv.is_empty() {
        serde_json::Value::Null
    } else {
        match escape::ordering_report(&adam, &inv, spec.bootstrap, spec.seeds[0]) {
            Ok(r) => serde_json::to_value(r).expect("report serializes"),
            Err(e) => {
                out.warn(format!("ordering report skipped: {e}"));
                serde_json::Value::Null
            }
        }
    };
    out.json("fit.json", &serde_json::json!({ "fits": fits, "ordering": ordering }))
}

// --------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub mechanism: &'static str,
    /// Grid value as configured.
    pub parameter: f64,
    /// Value after rescaling to this run's iteration or epoch budget.
    pub effective: f64,
    pub schedule: Schedule,
}

/// The grid after rescaling to a run of `iterations` optimizer steps.
pub fn sweep_grid(spec: &SweepSpec, iterations: u64) -> Vec<SweepCell> {
    let factor = if spec.reference_iterations == 0 {
        1.0
    } else {
        spec.reference_iterations as f64 / iterations as f64
    };
    match spec.mode {
        SweepMode::Rate => spec
            .rates
            .iter()
            .map(|&r| {
                let rate = r * factor;
                SweepCell {
                    mechanism: "linear",
                    parameter: r,
                    effective: rate,
                    schedule: Schedule::Linear { rate },
                }
            })
            .collect(),
        SweepMode::Mechanism => {
            let exp = spec.bases.iter().map(|&b| {
                let base = b.powf(factor);
                SweepCell {
                    mechanism: "exponential",
                    parameter: b,
                    effective: base,
                    schedule: Schedule::Exponential { base },
                }
            });
            let fixed = spec.switch_epochs.iter().map(|&e| {
                let switch_epoch = if spec.reference_epochs == 0 {
                    e
                } else {
                    (e as f64 * spec.epochs as f64 / spec.reference_epochs as f64).round() as u64
                };
                SweepCell {
                    mechanism: "fixed_epoch",
                    parameter: e as f64,
                    effective: switch_epoch as f64,
                    schedule: Schedule::FixedEpoch { switch_epoch },
                }
            });
            exp.chain(fixed).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSample {
    pub cell: usize,
    pub seed: u64,
    /// Final-epoch loss on the training split; `NaN` when the run diverged.
    pub train_loss: f64,
    pub val_acc: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
    pub val_acc_mean: f64,
    pub val_acc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub iterations: u64,
    pub rows: Vec<SweepRow>,
    pub samples: Vec<SweepSample>,
}

pub fn sweep_runs(spec: &SweepSpec) -> Result<SweepResult, RunError> {
    let probe = spec.data.build(spec.seeds[0])?;
    let iterations = total_iterations(probe.split.train.len(), spec.batch_size, spec.epochs);
    let grid = sweep_grid(spec, iterations);
    if grid.is_empty() {
        return Err(RunError::Invalid("sweep grid is empty".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let cfg = OptimizerConfig {
                kind: OptimizerKind::DualAdam,
                lr: spec.lr,
                beta1: spec.beta1,
                beta2: spec.beta2,
                eps: spec.eps,
                weight_decay: 0.0,
                schedule: grid[cell].schedule,
            };
            let (data, run) = train_one(
                &spec.data,
                &spec.hidden,
                spec.activation,
                &cfg,
                spec.epochs,
                spec.batch_size,
                seed,
            )?;
            let (train_loss, val_acc) = if run.diverged {
                (f64::NAN, f64::NAN)
            } else {
                let (vx, vy) = data.gather(&data.split.val);
                (
                    run.last().map_or(f64::NAN, |r| r.train_loss),
                    run.network()?.accuracy(&vx, &vy)?,
                )
            };
            Ok(SweepSample {
                cell,
                seed,
                train_loss,
                val_acc,
                diverged: run.diverged,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            let loss: Vec<f64> = samples.iter().filter(|s| s.cell == i).map(|s| s.train_loss).collect();
            let acc: Vec<f64> = samples.iter().filter(|s| s.cell == i).map(|s| s.val_acc).collect();
            SweepRow {
                cell,
                train_loss_mean: stats::mean(&loss),
                train_loss_std: stats::std_dev(&loss),
                val_acc_mean: stats::mean(&acc),
                val_acc_std: stats::std_dev(&acc),
            }
        })
        .collect();
    Ok(SweepResult {
        iterations,
        rows,
        samples,
    })
}

fn grid_value(cell: &SweepCell, v: f64) -> String {
    if cell.mechanism == "fixed_epoch" {
        (v as u64).to_string()
    } else {
        num(v)
    }
}

pub fn cmd_sweep(spec: &SweepSpec, out: &mut Outputs) -> Result<(), RunError> {
    let res = sweep_runs(spec)?;
    for s in res.samples.iter().filter(|s| s.diverged) {
        let c = &res.rows[s.cell].cell;
        out.diverged(
            format!("{} {} seed {}", c.mechanism, grid_value(c, c.parameter), s.seed),
            spec.allow_divergence,
        );
    }
    let mode = spec.mode;
    out.csv("sweep.csv", |w| {
        let mut w = csv_writer(w);
        match mode {
            SweepMode::Rate => w.write_record(SWEEP_RATE_HEADER)?,
            SweepMode::Mechanism => w.write_record(SWEEP_MECHANISM_HEADER)?,
        }
        for r in &res.rows {
            let stats = [
                num(r.train_loss_mean),
                num(r.train_loss_std),
                num(r.val_acc_mean),
                num(r.val_acc_std),
            ];
            let mut rec = match mode {
                SweepMode::Rate => vec![num(r.cell.parameter)],
                SweepMode::Mechanism => vec![r.cell.mechanism.to_string(), grid_value(&r.cell, r.cell.parameter)],
            };
            rec.extend(stats);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.csv("cells.csv", |w| {
        let mut w = csv_writer(w);
        w.write_record(SWEEP_CELLS_HEADER)?;
        for s in &res.samples {
            let c = &res.rows[s.cell].cell;
            w.write_record([
                c.mechanism.to_string(),
                grid_value(c, c.parameter),
                grid_value(c, c.effective),
                s.seed.to_string(),
                num(s.train_loss),
                num(s.val_acc),
                s.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "sweep.json",
        &serde_json::json!({ "iterations": res.iterations, "rows": res.rows }),
    )
}

/// Resolves a relative `theta` path against the directory holding the config and
/// checks that the file exists.
pub fn resolve_hessian(spec: &HessianSpec, config_dir: &Path) -> Result<HessianSpec, RunError> {
    let mut spec = spec.clone();
    if let (HessianModel::Network, Some(p)) = (spec.model, &spec.theta) {
        let joined = config_dir.join(p);
        let full = std::path::absolute(&joined).unwrap_or(joined);
        if !full.is_file() {
            return Err(RunError::Invalid(format!(
                "saved parameters not found at {}",
                full.display()
            )));
        }
        spec.theta = Some(full);
    }
    Ok(spec)
}
