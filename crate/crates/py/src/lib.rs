//! Python bindings: the optimizers, the schedule and FLOPs helpers, the two-basin
//! trajectory runner and the experiment runner.

use dualadam::config::parse_seed_range;
use dualadam::landscape::{self, NoiseModel, TrajectoryParams, TWO_BASIN_DOMAIN};
use dualadam::optim::{self, OptimizerKind};
use dualadam::runner::{self, RunOptions, Subcommand};
use dualadam::{OptimizerConfig, OptimizerState, Schedule};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn make_schedule(schedule: &str, rate: f64, base: f64, switch_epoch: u64, fixed_alpha: f64) -> PyResult<Schedule> {
    Ok(match schedule {
        "linear" => Schedule::Linear { rate },
        "exponential" => Schedule::Exponential { base },
        "fixed_epoch" => Schedule::FixedEpoch { switch_epoch },
        "constant_alpha" => Schedule::ConstantAlpha { fixed_alpha },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown schedule `{other}`, expected one of linear, exponential, fixed_epoch, constant_alpha"
            )))
        }
    })
}

/// Adam, AdamW, InvAdam or DualAdam over a flat parameter vector.
#[pyclass(module = "dualadam_py")]
struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

#[pymethods]
impl Optimizer {
    #[new]
    #[pyo3(signature = (kind, num_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
                        schedule="linear", rate=8e-5, base=0.99, switch_epoch=10, fixed_alpha=0.5))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        num_params: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        schedule: &str,
        rate: f64,
        base: f64,
        switch_epoch: u64,
        fixed_alpha: f64,
    ) -> PyResult<Self> {
        let cfg = OptimizerConfig {
            kind: kind.parse::<OptimizerKind>().map_err(value_err)?,
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            schedule: make_schedule(schedule, rate, base, switch_epoch, fixed_alpha)?,
        };
        cfg.validate().map_err(value_err)?;
        Ok(Self {
            cfg,
            state: OptimizerState::new(num_params),
        })
    }

    /// Applies one update in place of a copy and returns `(theta, report)`.
    #[pyo3(signature = (theta, grad, epoch=0))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        mut theta: Vec<f64>,
        grad: Vec<f64>,
        epoch: u64,
    ) -> PyResult<(Vec<f64>, Bound<'py, PyDict>)> {
        let r = optim::step(&mut self.state, &mut theta, &grad, &self.cfg, epoch).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("alpha", r.alpha)?;
        d.set_item("update_norm", r.update_norm)?;
        d.set_item("adam_part_norm", r.adam_part_norm)?;
        d.set_item("inv_part_norm", r.inv_part_norm)?;
        Ok((theta, d))
    }

    #[getter]
    fn t(&self) -> u64 {
        self.state.t()
    }

    #[getter]
    fn m(&self) -> Vec<f64> {
        self.state.m().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.state.v().to_vec()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.cfg.kind.name()
    }

    /// InvAdam share at step `t`.
    #[pyo3(signature = (t, epoch=0))]
    fn alpha(&self, t: u64, epoch: u64) -> f64 {
        self.cfg.alpha(t, epoch)
    }
}

#[pyfunction]
#[pyo3(signature = (m_hat, v_hat, eps=1e-8))]
fn adam_update(m_hat: Vec<f64>, v_hat: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    if m_hat.len() != v_hat.len() {
        return Err(PyValueError::new_err("m_hat and v_hat differ in length"));
    }
    Ok(optim::adam_update(&m_hat, &v_hat, eps))
}

#[pyfunction]
fn invadam_update(m_hat: Vec<f64>, v_hat: Vec<f64>) -> PyResult<Vec<f64>> {
    if m_hat.len() != v_hat.len() {
        return Err(PyValueError::new_err("m_hat and v_hat differ in length"));
    }
    Ok(optim::invadam_update(&m_hat, &v_hat))
}

/// `alpha` for a schedule given by name and its single parameter.
#[pyfunction]
#[pyo3(signature = (schedule, parameter, t, epoch=0))]
fn alpha_at(schedule: &str, parameter: f64, t: u64, epoch: u64) -> PyResult<f64> {
    let s = make_schedule(schedule, parameter, parameter, parameter as u64, parameter)?;
    s.validate().map_err(value_err)?;
    Ok(s.alpha_at(t, epoch))
}

#[pyfunction]
fn flops_per_iteration(p: u64, optimizer: &str, alpha_active: bool) -> PyResult<u64> {
    let kind = optimizer.parse::<OptimizerKind>().map_err(value_err)?;
    Ok(optim::flops_per_iteration(p, kind, alpha_active))
}

#[pyfunction]
fn overhead_fraction(batch_size: u64) -> f64 {
    optim::overhead_fraction(batch_size)
}

/// Runs one optimizer on the default two-basin landscape.
#[pyfunction]
#[pyo3(signature = (optimizer, lr, seed=0, steps=5000, sigma=0.05, start=(-0.9, 0.1)))]
fn two_basin_trajectory<'py>(
    py: Python<'py>,
    optimizer: &str,
    lr: f64,
    seed: u64,
    steps: usize,
    sigma: f64,
    start: (f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let kind = optimizer.parse::<OptimizerKind>().map_err(value_err)?;
    let land = landscape::two_basin(Default::default(), TWO_BASIN_DOMAIN).map_err(value_err)?;
    let params = TrajectoryParams {
        start: [start.0, start.1],
        max_steps: steps,
        seed,
        basin_radius: 0.5,
    };
    let t = landscape::run_trajectory(
        &land,
        &OptimizerConfig::new(kind, lr),
        &NoiseModel::isotropic(sigma),
        &params,
    )
    .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("x", t.steps.iter().map(|s| s.x).collect::<Vec<_>>())?;
    d.set_item("y", t.steps.iter().map(|s| s.y).collect::<Vec<_>>())?;
    d.set_item("loss", t.steps.iter().map(|s| s.loss).collect::<Vec<_>>())?;
    d.set_item("terminal_basin", t.terminal_basin_name())?;
    d.set_item("diverged", t.diverged)?;
    Ok(d)
}

/// Runs a subcommand and returns the run directory.
#[pyfunction]
#[pyo3(signature = (subcommand, config=None, seeds=None, out=None, jobs=None))]
fn run(
    subcommand: &str,
    config: Option<PathBuf>,
    seeds: Option<&str>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> PyResult<String> {
    let sub = subcommand.parse::<Subcommand>().map_err(value_err)?;
    let opts = RunOptions {
        config,
        seeds: seeds.map(parse_seed_range).transpose().map_err(value_err)?,
        out_root: out,
        jobs,
    };
    let (dir, _) = runner::execute(sub, &opts).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(dir.display().to_string())
}

/// Validates a run directory and returns its manifest as a JSON string.
#[pyfunction]
fn check_run_dir(run_dir: PathBuf) -> PyResult<String> {
    let m = runner::check_run_dir(&run_dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string(&m).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn dualadam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Optimizer>()?;
    m.add_function(wrap_pyfunction!(adam_update, m)?)?;
    m.add_function(wrap_pyfunction!(invadam_update, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_at, m)?)?;
    m.add_function(wrap_pyfunction!(flops_per_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(overhead_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(two_basin_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check_run_dir, m)?)?;
    m.add("ARTIFACT_VERSION", dualadam::ARTIFACT_VERSION)?;
    Ok(())
}
