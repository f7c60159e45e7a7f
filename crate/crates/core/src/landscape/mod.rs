//! Two-parameter test landscapes with analytic gradients.

mod noise;
mod trajectory;

pub use noise::{NoiseKind, NoiseModel};
pub use trajectory::{classify_basin, run_trajectory, Trajectory, TrajectoryParams, TrajectoryStep};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("point ({x}, {y}) lies outside the domain [{xmin}, {xmax}] x [{ymin}, {ymax}]")]
    OutOfDomain {
        x: f64,
        y: f64,
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },
    #[error("invalid landscape parameters: {0}")]
    InvalidParams(String),
    #[error("invalid trajectory request: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
}

pub type Point = [f64; 2];

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min: Point,
    pub max: Point,
}

impl Domain {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Projects onto the box. NaN coordinates are left untouched.
    pub fn clamp(&self, p: Point) -> Point {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
        ]
    }

    /// Distance from `p` to the nearest face (negative outside).
    pub fn margin(&self, p: Point) -> f64 {
        (0..2)
            .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    }

    fn check(&self, p: Point) -> Result<(), LandscapeError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(LandscapeError::OutOfDomain {
                x: p[0],
                y: p[1],
                xmin: self.min[0],
                xmax: self.max[0],
                ymin: self.min[1],
                ymax: self.max[1],
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasinLabel {
    Sharp,
    Flat,
}

impl fmt::Display for BasinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasinLabel::Sharp => "sharp",
            BasinLabel::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownMinimum {
    pub position: Point,
    pub label: BasinLabel,
    /// Largest Hessian eigenvalue at `position`.
    pub curvature: f64,
}

/// Parameters of `L = 1 − a1 exp(−s1 |p − c1|²) − a2 exp(−s2 |p − c2|²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoBasinParams {
    pub sharp_scale: f64,
    pub flat_scale: f64,
    pub sharp_depth: f64,
    pub flat_depth: f64,
    pub sharp_center: Point,
    pub flat_center: Point,
}

impl Default for TwoBasinParams {
    fn default() -> Self {
        Self {
            sharp_scale: 50.0,
            flat_scale: 0.5,
            sharp_depth: 1.0,
            flat_depth: 0.95,
            sharp_center: [-1.0, 0.0],
            flat_center: [3.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    TwoBasin(TwoBasinParams),
    Eggholder,
    /// `½ (a x'² + b y'²)` in coordinates rotated by `angle` radians.
    Quadratic {
        a: f64,
        b: f64,
        angle: f64,
    },
}

/// A scalar field on a box in ℝ² together with its catalogued minima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub name: String,
    pub surface: Surface,
    pub domain: Domain,
    pub known_minima: Vec<KnownMinimum>,
}

/// Domain used for the two-basin landscape unless configured otherwise.
pub const TWO_BASIN_DOMAIN: Domain = Domain {
    min: [-2.0, -1.5],
    max: [5.0, 1.5],
};

pub const EGGHOLDER_DOMAIN: Domain = Domain {
    min: [-512.0, -512.0],
    max: [512.0, 512.0],
};

/// Sharp well at `c1` and a wide, slightly shallower well at `c2`.
pub fn two_basin(params: TwoBasinParams, domain: Domain) -> Result<Landscape, LandscapeError> {
    let TwoBasinParams {
        sharp_scale: s1,
        flat_scale: s2,
        sharp_depth: a1,
        flat_depth: a2,
        ..
    } = params;
    if !(s1 > s2 && s2 > 0.0) {
        return Err(LandscapeError::InvalidParams(format!(
            "sharp_scale must exceed flat_scale > 0, got {s1} and {s2}"
        )));
    }
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(LandscapeError::InvalidParams(format!(
            "well depths must be positive, got {a1} and {a2}"
        )));
    }
    let mut landscape = Landscape {
        name: "two_basin".into(),
        surface: Surface::TwoBasin(params),
        domain,
        known_minima: Vec::new(),
    };
    for (center, label) in [
        (params.sharp_center, BasinLabel::Sharp),
        (params.flat_center, BasinLabel::Flat),
    ] {
        let position = landscape.refine_minimum(center)?;
        let curvature = landscape.curvature_at(position)?;
        landscape.known_minima.push(KnownMinimum {
            position,
            label,
            curvature,
        });
    }
    Ok(landscape)
}

/// Approximate interior local minima of the Eggholder function, refined on construction.
/// The two with the larger curvature are labelled sharp, the other two flat.
const EGGHOLDER_SEEDS: [Point; 4] = [
    [482.35, 432.88],
    [-390.37, -415.09],
    [-465.69, 385.72],
    [347.33, 499.42],
];

pub fn eggholder() -> Result<Landscape, LandscapeError> {
    let mut landscape = Landscape {
        name: "eggholder".into(),
        surface: Surface::Eggholder,
        domain: EGGHOLDER_DOMAIN,
        known_minima: Vec::new(),
    };
    let mut found = Vec::new();
    for seed in EGGHOLDER_SEEDS {
        let position = landscape.refine_minimum(seed)?;
        found.push((position, landscape.curvature_at(position)?));
    }
    let mut curvatures: Vec<f64> = found.iter().map(|f| f.1).collect();
    curvatures.sort_by(f64::total_cmp);
    let split = 0.5 * (curvatures[1] + curvatures[2]);
    landscape.known_minima = found
        .into_iter()
        .map(|(position, curvature)| KnownMinimum {
            position,
            label: if curvature > split {
                BasinLabel::Sharp
            } else {
                BasinLabel::Flat
            },
            curvature,
        })
        .collect();
    Ok(landscape)
}

/// `½ (a x'² + b y'²)` with `(x', y')` the coordinates rotated by `angle`.
pub fn quadratic(a: f64, b: f64, angle: f64, domain: Domain) -> Landscape {
    let label = |c: f64| if c >= 1.0 { BasinLabel::Sharp } else { BasinLabel::Flat };
    Landscape {
        name: "quadratic".into(),
        surface: Surface::Quadratic { a, b, angle },
        domain,
        known_minima: vec![KnownMinimum {
            position: [0.0, 0.0],
            label: label(a.max(b)),
            curvature: a.max(b),
        }],
    }
}

impl Landscape {
    pub fn eval(&self, p: Point) -> Result<f64, LandscapeError> {
        self.domain.check(p)?;
        Ok(self.eval_unchecked(p))
    }

    pub fn grad(&self, p: Point) -> Result<Point, LandscapeError> {
        self.domain.check(p)?;
        Ok(self.grad_unchecked(p))
    }

    /// Central differences of the analytic gradient, symmetrized.
    pub fn hessian_fd(&self, p: Point, h: f64) -> Result<[[f64; 2]; 2], LandscapeError> {
        let mut cols = [[0.0; 2]; 2];
        for (j, col) in cols.iter_mut().enumerate() {
            let mut plus = p;
            let mut minus = p;
            plus[j] += h;
            minus[j] -= h;
            let gp = self.grad(plus)?;
            let gm = self.grad(minus)?;
            *col = [(gp[0] - gm[0]) / (2.0 * h), (gp[1] - gm[1]) / (2.0 * h)];
        }
        let off = 0.5 * (cols[0][1] + cols[1][0]);
        Ok([[cols[0][0], off], [off, cols[1][1]]])
    }

    /// Evaluates `(x, y, loss)` on an `nx × ny` mesh spanning the domain, row-major in y.
    pub fn contour_grid(&self, nx: usize, ny: usize) -> Vec<(f64, f64, f64)> {
        let axis = |lo: f64, hi: f64, n: usize, i: usize| {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = axis(self.domain.min[1], self.domain.max[1], ny, j);
            for i in 0..nx {
                let x = axis(self.domain.min[0], self.domain.max[0], nx, i);
                out.push((x, y, self.eval_unchecked([x, y])));
            }
        }
        out
    }

    pub(crate) fn eval_unchecked(&self, p: Point) -> f64 {
        match self.surface {
            Surface::TwoBasin(q) => {
                let w1 = q.sharp_depth * (-q.sharp_scale * dist2(p, q.sharp_center)).exp();
                let w2 = q.flat_depth * (-q.flat_scale * dist2(p, q.flat_center)).exp();
                1.0 - w1 - w2
            }
            Surface::Eggholder => {
                let (x, y) = (p[0], p[1]);
                let a = x / 2.0 + y + 47.0;
                let b = x - (y + 47.0);
                -(y + 47.0) * a.abs().sqrt().sin() - x * b.abs().sqrt().sin()
            }
            Surface::Quadratic { a, b, angle } => {
                let (xr, yr) = rotate(p, angle);
                0.5 * (a * xr * xr + b * yr * yr)
            }
        }
    }

    pub(crate) fn grad_unchecked(&self, p: Point) -> Point {
        match self.surface {
            Surface::TwoBasin(q) => {
                let mut g = [0.0; 2];
                for (s, a, c) in [
                    (q.sharp_scale, q.sharp_depth, q.sharp_center),
                    (q.flat_scale, q.flat_depth, q.flat_center),
                ] {
                    let w = 2.0 * a * s * (-s * dist2(p, c)).exp();
                    g[0] += w * (p[0] - c[0]);
                    g[1] += w * (p[1] - c[1]);
                }
                g
            }
            Surface::Eggholder => {
                let (x, y) = (p[0], p[1]);
                let a = x / 2.0 + y + 47.0;
                let b = x - (y + 47.0);
                // d/du sin√|u| = cos√|u| · sign(u) / (2√|u|), taken as 0 at u = 0
                let ds = |u: f64| {
                    if u == 0.0 {
                        0.0
                    } else {
                        let r = u.abs().sqrt();
                        r.cos() * u.signum() / (2.0 * r)
                    }
                };
                let (da, db) = (ds(a), ds(b));
                let gx = -(y + 47.0) * da * 0.5 - b.abs().sqrt().sin() - x * db;
                let gy = -a.abs().sqrt().sin() - (y + 47.0) * da + x * db;
                [gx, gy]
            }
            Surface::Quadratic { a, b, angle } => {
                let (xr, yr) = rotate(p, angle);
                let (gxr, gyr) = (a * xr, b * yr);
                let (s, c) = angle.sin_cos();
                // back to original coordinates: Rᵀ (gxr, gyr)
                [c * gxr - s * gyr, s * gxr + c * gyr]
            }
        }
    }

    fn curvature_at(&self, p: Point) -> Result<f64, LandscapeError> {
        let h = 1e-5 * (1.0 + p[0].abs().max(p[1].abs()));
        let (l, _) = crate::linalg::sym_eig2(self.hessian_fd(p, h)?);
        Ok(l[0])
    }

    /// Newton iterations on the gradient from `start` until it vanishes to 1e-12.
    fn refine_minimum(&self, start: Point) -> Result<Point, LandscapeError> {
        let mut p = start;
        for _ in 0..100 {
            let g = self.grad(p)?;
            if g[0].hypot(g[1]) <= 1e-12 {
                break;
            }
            let h = 1e-6 * (1.0 + p[0].abs().max(p[1].abs()));
            let hm = self.hessian_fd(p, h)?;
            let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[1][0];
            if !(det.abs() > 0.0) {
                break;
            }
            let dx = (hm[1][1] * g[0] - hm[0][1] * g[1]) / det;
            let dy = (-hm[1][0] * g[0] + hm[0][0] * g[1]) / det;
            p = self.domain.clamp([p[0] - dx, p[1] - dy]);
        }
        Ok(p)
    }
}

fn dist2(p: Point, c: Point) -> f64 {
    let dx = p[0] - c[0];
    let dy = p[1] - c[1];
    dx * dx + dy * dy
}

fn rotate(p: Point, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * p[0] + s * p[1], -s * p[0] + c * p[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fd_grad(l: &Landscape, p: Point, h: f64) -> Point {
        let f = |q: Point| l.eval_unchecked(q);
        [
            (f([p[0] + h, p[1]]) - f([p[0] - h, p[1]])) / (2.0 * h),
            (f([p[0], p[1] + h]) - f([p[0], p[1] - h])) / (2.0 * h),
        ]
    }

    fn rel_err(a: Point, b: Point) -> f64 {
        let num = (a[0] - b[0]).hypot(a[1] - b[1]);
        let den = a[0].hypot(a[1]).max(b[0].hypot(b[1])).max(1e-8);
        num / den
    }

    #[test]
    fn two_basin_gradient_matches_finite_differences() {
        let l = two_basin(TwoBasinParams::default(), TWO_BASIN_DOMAIN).unwrap();
        let mut rng = crate::rng::stream(11, 0);
        let mut checked = 0;
        while checked < 100 {
            let p = [rng.random_range(-1.9..4.9), rng.random_range(-1.4..1.4)];
            let g = l.grad(p).unwrap();
            // on the plateau the gradient is below what central differences can resolve
            if g[0].hypot(g[1]) < 1e-4 {
                continue;
            }
            let e = rel_err(g, fd_grad(&l, p, 1e-5));
            assert!(e <= 1e-6, "at {p:?}: {e}");
            checked += 1;
        }
    }

    #[test]
    fn eggholder_gradient_matches_finite_differences() {
        let l = eggholder().unwrap();
        let mut rng = crate::rng::stream(12, 0);
        let mut checked = 0;
        while checked < 100 {
            let p: Point = [rng.random_range(-510.0..510.0), rng.random_range(-510.0..510.0)];
            let a = p[0] / 2.0 + p[1] + 47.0;
            let b = p[0] - p[1] - 47.0;
            if a.abs() < 1.0 || b.abs() < 1.0 {
                continue;
            }
            assert!(rel_err(l.grad(p).unwrap(), fd_grad(&l, p, 1e-5)) <= 1e-5, "at {p:?}");
            checked += 1;
        }
    }

    #[test]
    fn eggholder_reference_values() {
        let l = eggholder().unwrap();
        assert!((l.eval([512.0, 404.2319]).unwrap() + 959.6407).abs() < 1e-4);
        assert_eq!(l.eval([0.0, 0.0]).unwrap(), -47.0 * 47f64.sqrt().sin());
        assert!(matches!(l.eval([513.0, 0.0]), Err(LandscapeError::OutOfDomain { .. })));
        assert!(l.grad([0.0, -600.0]).is_err());
    }

    #[test]
    fn eggholder_kink_uses_zero_subgradient() {
        let l = eggholder().unwrap();
        // x/2 + y + 47 = 0 at (0, -47)
        let g = l.grad([0.0, -47.0]).unwrap();
        assert!(g[0].is_finite() && g[1].is_finite());
    }

    #[test]
    fn known_minima_are_stationary() {
        for l in [
            two_basin(TwoBasinParams::default(), TWO_BASIN_DOMAIN).unwrap(),
            eggholder().unwrap(),
        ] {
            for m in &l.known_minima {
                let g = l.grad(m.position).unwrap();
                assert!(g[0].hypot(g[1]) <= 1e-6, "{} {:?}", l.name, m);
            }
        }
    }

    #[test]
    fn eggholder_has_both_labels() {
        let l = eggholder().unwrap();
        assert_eq!(l.known_minima.len(), 4);
        assert!(l.known_minima.iter().any(|m| m.label == BasinLabel::Sharp));
        assert!(l.known_minima.iter().any(|m| m.label == BasinLabel::Flat));
    }

    #[test]
    fn two_basin_roles_and_curvature() {
        let l = two_basin(TwoBasinParams::default(), TWO_BASIN_DOMAIN).unwrap();
        let sharp = l.known_minima[0];
        let flat = l.known_minima[1];
        assert_eq!(sharp.label, BasinLabel::Sharp);
        assert!((sharp.position[0] + 1.0).abs() < 1e-3);
        assert!((sharp.curvature / 100.0 - 1.0).abs() < 1e-3);
        assert!((flat.curvature / 0.95 - 1.0).abs() < 1e-2);
        // far from both wells the loss is ~1
        assert!((l.eval([1.0, 1.5]).unwrap() - 1.0).abs() < 0.1);
        let far = two_basin(TwoBasinParams::default(), Domain::new([-100.0, -100.0], [100.0, 100.0])).unwrap();
        assert!((far.eval([1.0, 50.0]).unwrap() - 1.0).abs() < 1e-12);

        let inverted = TwoBasinParams {
            sharp_scale: 0.4,
            ..TwoBasinParams::default()
        };
        assert!(two_basin(inverted, TWO_BASIN_DOMAIN).is_err());
    }

    #[test]
    fn rotated_quadratic_gradient() {
        let l = quadratic(3.0, 1.0, 0.7, Domain::new([-5.0, -5.0], [5.0, 5.0]));
        for p in [[0.3, -1.2], [2.0, 1.0], [-4.0, 0.5]] {
            assert!(rel_err(l.grad(p).unwrap(), fd_grad(&l, p, 1e-5)) < 1e-9);
        }
    }

    #[test]
    fn domain_clamp_stays_inside() {
        let d = TWO_BASIN_DOMAIN;
        for p in [[-10.0, 0.0], [10.0, 10.0], [0.0, -3.0], [1.0, 1.0]] {
            assert!(d.contains(d.clamp(p)));
        }
    }

    #[test]
    fn contour_grid_shape() {
        let l = two_basin(TwoBasinParams::default(), TWO_BASIN_DOMAIN).unwrap();
        let g = l.contour_grid(5, 3);
        assert_eq!(g.len(), 15);
        assert_eq!((g[0].0, g[0].1), (-2.0, -1.5));
        assert_eq!((g[14].0, g[14].1), (5.0, 1.5));
    }
}
