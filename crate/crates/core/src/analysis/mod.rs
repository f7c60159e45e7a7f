//! Curvature and flatness measurements: exact 2-D Hessians, finite-difference
//! Hessian-vector products, top eigenvalues, trace estimates and 1-D loss slices.

use crate::artifact::{csv_writer, num};
use crate::landscape::{Landscape, LandscapeError, Point};
use crate::linalg::{dot, norm, sym_eig2};
use crate::nn::{Network, NnError};
use crate::rng::{self, streams};
use crate::stats;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hessian2d {
    pub matrix: [[f64; 2]; 2],
    /// Descending.
    pub eigenvalues: [f64; 2],
    /// Unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: [[f64; 2]; 2],
    pub step: f64,
}

impl Hessian2d {
    pub fn trace(&self) -> f64 {
        self.eigenvalues[0] + self.eigenvalues[1]
    }

    pub fn report(&self) -> HessianReport {
        HessianReport {
            top_eigenvalues: self.eigenvalues.to_vec(),
            trace_estimate: self.trace(),
            trace_stderr: 0.0,
            num_probes: 0,
            hvp_step: self.step,
            converged: true,
        }
    }
}

/// Hessian of a landscape from central differences of its analytic gradient.
pub fn hessian_2d(landscape: &Landscape, p: Point, h: f64) -> Result<Hessian2d> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    if landscape.domain.margin(p) < h {
        return Err(AnalysisError::InvalidArgument(format!(
            "point {p:?} lies within {h} of the domain boundary"
        )));
    }
    let matrix = landscape.hessian_fd(p, h)?;
    let (eigenvalues, eigenvectors) = sym_eig2(matrix);
    Ok(Hessian2d {
        matrix,
        eigenvalues,
        eigenvectors,
        step: h,
    })
}

/// Default finite-difference step for Hessian-vector products at `theta`.
pub fn default_hvp_step(theta: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(theta))
}

/// `H·d` from a central difference of the gradient along `d/‖d‖`, rescaled by `‖d‖`.
pub fn hvp<G>(grad: G, theta: &[f64], d: &[f64], h: f64) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if d.len() != theta.len() {
        return Err(AnalysisError::InvalidArgument(format!(
            "direction has length {}, expected {}",
            d.len(),
            theta.len()
        )));
    }
    let dn = norm(d);
    if !(dn > 0.0 && dn.is_finite()) {
        return Err(AnalysisError::InvalidArgument(
            "direction must be non-zero and finite".into(),
        ));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let plus: Vec<f64> = theta.iter().zip(d).map(|(t, di)| t + h * di / dn).collect();
    let minus: Vec<f64> = theta.iter().zip(d).map(|(t, di)| t - h * di / dn).collect();
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    if let Some(i) = gp.iter().chain(&gm).position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite(format!(
            "gradient component {} at a probe point",
            i % theta.len()
        )));
    }
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h) * dn).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEigs {
    /// Descending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// Largest Rayleigh quotient seen while iterating on each deflated operator.
    pub rayleigh_max: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: bool,
}

/// Power iteration with deflation. Each eigenvalue stops when consecutive Rayleigh
/// quotients agree to `tol` relative; otherwise the last iterate is kept and the result
/// is flagged non-converged.
pub fn top_eigs<H>(op: H, p: usize, k: usize, iters: usize, tol: f64, seed: u64) -> Result<TopEigs>
where
    H: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if k == 0 || k > p.min(10) {
        return Err(AnalysisError::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            p.min(10)
        )));
    }
    if iters == 0 {
        return Err(AnalysisError::InvalidArgument("iters must be positive".into()));
    }
    let mut rng = rng::stream(seed, streams::PROBES);
    let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    let mut out = TopEigs {
        values: Vec::with_capacity(k),
        vectors: Vec::with_capacity(k),
        rayleigh_max: Vec::with_capacity(k),
        iterations: Vec::with_capacity(k),
        converged: true,
    };

    let project = |v: &mut Vec<f64>, found: &[(f64, Vec<f64>)]| {
        for (_, u) in found {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, ui)| *x -= c * ui);
        }
    };

    for _ in 0..k {
        let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        project(&mut v, &found);
        normalize(&mut v)?;
        let mut lambda = f64::NAN;
        let mut seen_max = f64::NEG_INFINITY;
        let mut done = false;
        let mut used = 0;
        for it in 1..=iters {
            used = it;
            let mut hv = op(&v)?;
            for (l, u) in &found {
                let c = l * dot(&v, u);
                hv.iter_mut().zip(u).for_each(|(x, ui)| *x -= c * ui);
            }
            let next = dot(&v, &hv);
            if !next.is_finite() {
                return Err(AnalysisError::NonFinite("Rayleigh quotient".into()));
            }
            seen_max = seen_max.max(next);
            let settled = (next - lambda).abs() <= tol * next.abs().max(1.0);
            lambda = next;
            project(&mut hv, &found);
            if norm(&hv) == 0.0 {
                done = true;
                break;
            }
            v = hv;
            normalize(&mut v)?;
            if settled {
                done = true;
                break;
            }
        }
        out.converged &= done;
        out.iterations.push(used);
        out.rayleigh_max.push(seen_max);
        found.push((lambda, v));
    }

    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (l, v) in found {
        out.values.push(l);
        out.vectors.push(v);
    }
    Ok(out)
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(AnalysisError::NonFinite("iterate norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub probes: usize,
}

/// Hutchinson's estimator with Rademacher probes. Probes are drawn up front from the
/// seed and evaluated in parallel; the pairwise-summed mean does not depend on thread
/// scheduling.
pub fn hutchinson_trace<H>(op: H, p: usize, probes: usize, seed: u64) -> Result<TraceEstimate>
where
    H: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if probes < 4 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 4 probes, got {probes}"
        )));
    }
    if p == 0 {
        return Err(AnalysisError::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = rng::stream(seed, streams::PROBES);
    let zs: Vec<Vec<f64>> = (0..probes)
        .map(|_| (0..p).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    let samples = zs
        .par_iter()
        .map(|z| op(z).map(|hz| dot(z, &hz)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TraceEstimate {
        estimate: stats::mean(&samples),
        stderr: stats::std_dev(&samples) / (probes as f64).sqrt(),
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessSlice {
    pub zetas: Vec<f64>,
    pub losses: Vec<f64>,
    pub direction_seed: u64,
    pub direction_norm: f64,
}

impl FlatnessSlice {
    pub const CSV_HEADER: [&'static str; 2] = ["zeta", "loss"];

    /// Loss at the grid point equal to `zeta`, if present.
    pub fn at(&self, zeta: f64) -> Option<f64> {
        self.zetas.iter().position(|&z| z == zeta).map(|i| self.losses[i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv_writer(w);
        w.write_record(Self::CSV_HEADER)?;
        for (z, l) in self.zetas.iter().zip(&self.losses) {
            w.write_record([num(*z), num(*l)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` points evenly spaced on `[-half_width, half_width]`, symmetric by construction.
pub fn zeta_grid(half_width: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    let mid = (n - 1) as f64 / 2.0;
    (0..n).map(|i| half_width * (i as f64 - mid) / mid).collect()
}

/// Default slice grid: 41 points on `[-1, 1]`.
pub fn default_zetas() -> Vec<f64> {
    zeta_grid(1.0, 41)
}

/// Loss along `θ* + ζ·l` with `l` standard Gaussian, rescaled to `‖l‖ = √p`.
pub fn flatness_slice<L>(loss: L, theta: &[f64], zetas: &[f64], seed: u64) -> Result<FlatnessSlice>
where
    L: Fn(&[f64]) -> Result<f64>,
{
    if !zetas.contains(&0.0) {
        return Err(AnalysisError::InvalidArgument("zeta grid must contain 0".into()));
    }
    let p = theta.len();
    let mut l: Vec<f64> = {
        let mut rng = rng::stream(seed, streams::DIRECTION);
        (0..p).map(|_| rng.sample(StandardNormal)).collect()
    };
    let scale = (p as f64).sqrt() / norm(&l);
    l.iter_mut().for_each(|x| *x *= scale);
    let losses = zetas
        .iter()
        .map(|&z| {
            if z == 0.0 {
                return loss(theta);
            }
            let probe: Vec<f64> = theta.iter().zip(&l).map(|(t, li)| t + z * li).collect();
            loss(&probe)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlatnessSlice {
        zetas: zetas.to_vec(),
        losses,
        direction_seed: seed,
        direction_norm: norm(&l),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// Descending.
    pub top_eigenvalues: Vec<f64>,
    pub trace_estimate: f64,
    pub trace_stderr: f64,
    pub num_probes: usize,
    pub hvp_step: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub top_k: usize,
    pub power_iters: usize,
    pub power_tol: f64,
    pub probes: usize,
    /// `None` selects `default_hvp_step`.
    pub hvp_step: Option<f64>,
    pub zetas: Vec<f64>,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            top_k: 1,
            power_iters: 200,
            power_tol: 1e-6,
            probes: 100,
            hvp_step: None,
            zetas: default_zetas(),
            seed: 0,
        }
    }
}

/// Curvature report and flatness slice of a network's mean loss on `(x, labels)`.
pub fn analyze_network(
    net: &Network,
    x: &[f64],
    labels: &[usize],
    opts: &AnalysisOptions,
) -> Result<(HessianReport, FlatnessSlice)> {
    let theta = net.params();
    let h = opts.hvp_step.unwrap_or_else(|| default_hvp_step(theta));
    let grad = |p: &[f64]| -> Result<Vec<f64>> { Ok(net.loss_and_grad_at(p, x, labels)?.1) };
    let op = |d: &[f64]| hvp(grad, theta, d, h);
    let eigs = top_eigs(op, theta.len(), opts.top_k, opts.power_iters, opts.power_tol, opts.seed)?;
    let trace = hutchinson_trace(op, theta.len(), opts.probes, opts.seed)?;
    let slice = flatness_slice(|p| Ok(net.loss_at(p, x, labels)?), theta, &opts.zetas, opts.seed)?;
    Ok((
        HessianReport {
            top_eigenvalues: eigs.values,
            trace_estimate: trace.estimate,
            trace_stderr: trace.stderr,
            num_probes: trace.probes,
            hvp_step: h,
            converged: eigs.converged,
        },
        slice,
    ))
}

/// Exact `H·d` for a fixed symmetric matrix, used as a reference operator.
pub fn matrix_operator(h: &[Vec<f64>]) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + '_ {
    move |d: &[f64]| Ok(h.iter().map(|row| dot(row, d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{quadratic, two_basin, TwoBasinParams, TWO_BASIN_DOMAIN};

    fn diag(values: &[f64]) -> Vec<Vec<f64>> {
        (0..values.len())
            .map(|i| {
                (0..values.len())
                    .map(|j| if i == j { values[i] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let l = quadratic(3.0, 1.0, 0.0, TWO_BASIN_DOMAIN);
        let h = hessian_2d(&l, [0.2, -0.1], 1e-3).unwrap();
        assert!((h.eigenvalues[0] - 3.0).abs() <= 1e-6);
        assert!((h.eigenvalues[1] - 1.0).abs() <= 1e-6);
        assert_eq!(h.report().trace_estimate, h.eigenvalues[0] + h.eigenvalues[1]);
    }

    #[test]
    fn rotation_keeps_the_spectrum() {
        let angle = std::f64::consts::FRAC_PI_4;
        let l = quadratic(3.0, 1.0, angle, TWO_BASIN_DOMAIN);
        let h = hessian_2d(&l, [0.0, 0.0], 1e-3).unwrap();
        assert!((h.eigenvalues[0] - 3.0).abs() <= 1e-6);
        assert!((h.eigenvalues[1] - 1.0).abs() <= 1e-6);
        let e = h.eigenvectors[0];
        assert!((e[0].abs() - angle.cos()).abs() < 1e-6 && (e[1].abs() - angle.sin()).abs() < 1e-6);
    }

    #[test]
    fn sharp_well_curvature() {
        let l = two_basin(TwoBasinParams::default(), TWO_BASIN_DOMAIN).unwrap();
        let c1 = l.known_minima[0].position;
        let h = hessian_2d(&l, c1, 1e-5).unwrap();
        for ev in h.eigenvalues {
            assert!((ev - 100.0).abs() / 100.0 <= 1e-3, "{ev}");
        }
    }

    #[test]
    fn boundary_points_rejected() {
        let l = quadratic(3.0, 1.0, 0.0, TWO_BASIN_DOMAIN);
        assert!(hessian_2d(&l, [4.99995, 0.0], 1e-4).is_err());
        assert!(hessian_2d(&l, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn hvp_on_quadratic() {
        let h = diag(&[3.0, 1.0]);
        let grad = |p: &[f64]| Ok(h.iter().map(|r| dot(r, p)).collect());
        for step in [1e-6, 1e-2, 1.0] {
            let out = hvp(grad, &[0.3, -0.7], &[1.0, 0.0], step).unwrap();
            assert!((out[0] - 3.0).abs() < 1e-9 && out[1].abs() < 1e-9, "{out:?}");
        }
        let out = hvp(grad, &[0.0, 0.0], &[2.0, 2.0], 1e-3).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-9 && (out[1] - 2.0).abs() < 1e-9);
        assert!(hvp(grad, &[0.0, 0.0], &[0.0, 0.0], 1e-3).is_err());
        assert!(hvp(grad, &[0.0, 0.0], &[1.0], 1e-3).is_err());
    }

    #[test]
    fn power_iteration_recovers_the_spectrum() {
        let h = diag(&[3.0, 1.0]);
        let e = top_eigs(matrix_operator(&h), 2, 2, 500, 1e-14, 0).unwrap();
        assert!(e.converged);
        assert!(
            (e.values[0] - 3.0).abs() <= 1e-6 && (e.values[1] - 1.0).abs() <= 1e-6,
            "{:?}",
            e.values
        );
        assert!(top_eigs(matrix_operator(&h), 2, 3, 10, 1e-6, 0).is_err());
        assert!(top_eigs(matrix_operator(&h), 2, 0, 10, 1e-6, 0).is_err());
    }

    #[test]
    fn power_iteration_respects_rayleigh_bound() {
        let h = diag(&[5.0, 4.9, 2.0, 1.0, 0.5]);
        let e = top_eigs(matrix_operator(&h), 5, 4, 3, 1e-12, 1).unwrap();
        assert!(!e.converged);
        for (i, v) in e.values.iter().enumerate() {
            assert!(*v <= e.rayleigh_max.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            if i > 0 {
                assert!(*v <= e.values[i - 1]);
            }
        }
    }

    #[test]
    fn hutchinson_is_unbiased_on_diag() {
        let h = diag(&[3.0, 1.0]);
        let t = hutchinson_trace(matrix_operator(&h), 2, 10_000, 3).unwrap();
        assert!((t.estimate - 4.0).abs() <= 3.0 * t.stderr.max(1e-12));
        assert!(hutchinson_trace(matrix_operator(&h), 2, 3, 3).is_err());
        let again = hutchinson_trace(matrix_operator(&h), 2, 10_000, 3).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn slice_identity_and_symmetry() {
        let h = diag(&[3.0, 1.0, 0.5]);
        let theta = [0.1, 0.2, -0.3];
        let loss = |p: &[f64]| {
            let d: Vec<f64> = p.iter().zip(&theta).map(|(a, b)| a - b).collect();
            Ok(0.5 * dot(&d, &matrix_operator(&h)(&d).unwrap()))
        };
        let zetas = default_zetas();
        let s = flatness_slice(loss, &theta, &zetas, 11).unwrap();
        assert_eq!(s.at(0.0), Some(0.0));
        assert!(((s.direction_norm - 3f64.sqrt()) / 3f64.sqrt()).abs() < 1e-12);
        for i in 0..zetas.len() {
            let j = zetas.len() - 1 - i;
            assert_eq!(zetas[i], -zetas[j]);
            assert!((s.losses[i] - s.losses[j]).abs() <= 1e-8);
        }
        assert_eq!(s, flatness_slice(loss, &theta, &zetas, 11).unwrap());
        assert!(flatness_slice(loss, &theta, &[0.5, 1.0], 11).is_err());
    }

    #[test]
    fn slice_csv() {
        let s = FlatnessSlice {
            zetas: vec![-0.5, 0.0, 0.5],
            losses: vec![1.0, 0.25, 1.5],
            direction_seed: 0,
            direction_norm: 1.0,
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "zeta,loss\n-0.5,1.0\n0.0,0.25\n0.5,1.5\n"
        );
    }
}
