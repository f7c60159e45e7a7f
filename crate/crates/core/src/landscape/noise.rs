use super::{Landscape, LandscapeError, Point};
use crate::linalg::sym_eig2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    IsotropicGaussian,
    /// Covariance `σ² H / b`, with negative curvature directions receiving no noise.
    CurvatureScaled,
}

/// Additive gradient noise, applied to the raw gradient before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub batch_size: u32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
            batch_size: 1,
        }
    }

    pub fn isotropic(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::IsotropicGaussian,
            sigma,
            batch_size: 1,
        }
    }

    pub fn curvature_scaled(sigma: f64, batch_size: u32) -> Self {
        Self {
            kind: NoiseKind::CurvatureScaled,
            sigma,
            batch_size,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(format!("noise sigma must be >= 0, got {}", self.sigma));
        }
        if self.batch_size == 0 {
            return Err("noise batch_size must be positive".into());
        }
        Ok(())
    }

    /// Standard deviation along a direction of curvature `h`.
    pub fn scale(&self, h: f64) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::IsotropicGaussian => self.sigma,
            NoiseKind::CurvatureScaled => self.sigma * (h.max(0.0) / self.batch_size as f64).sqrt(),
        }
    }

    /// One scalar draw for a 1-D problem with curvature `h`. Consumes no randomness
    /// when the kind is `None`.
    pub fn sample_1d<R: Rng + ?Sized>(&self, rng: &mut R, h: f64) -> f64 {
        if self.is_none() {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        self.scale(h) * z
    }

    /// A 2-D draw at `p`; the curvature-scaled kind uses the local Hessian.
    pub fn sample_2d<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        landscape: &Landscape,
        p: Point,
    ) -> Result<Point, LandscapeError> {
        match self.kind {
            NoiseKind::None => Ok([0.0, 0.0]),
            NoiseKind::IsotropicGaussian => {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                Ok([self.sigma * z0, self.sigma * z1])
            }
            NoiseKind::CurvatureScaled => {
                let h = 1e-5 * (1.0 + p[0].abs().max(p[1].abs()));
                // shrink the probe step rather than fail at the box boundary
                let h = h.min(0.5 * landscape.domain.margin(p)).max(1e-9);
                let hess = landscape.hessian_fd(landscape.domain.clamp(p), h)?;
                let (vals, vecs) = sym_eig2(hess);
                let mut out = [0.0; 2];
                for (lambda, e) in vals.iter().zip(vecs) {
                    let z: f64 = rng.sample(StandardNormal);
                    let a = self.scale(*lambda) * z;
                    out[0] += a * e[0];
                    out[1] += a * e[1];
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_is_exactly_zero() {
        let mut rng = crate::rng::stream(0, 0);
        let n = NoiseModel::none();
        assert_eq!(n.sample_1d(&mut rng, 5.0), 0.0);
        let l = super::super::quadratic(3.0, 1.0, 0.0, super::super::Domain::new([-1.0, -1.0], [1.0, 1.0]));
        assert_eq!(n.sample_2d(&mut rng, &l, [0.1, 0.2]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn curvature_scaled_variance() {
        let n = NoiseModel::curvature_scaled(2.0, 4);
        assert!((n.scale(9.0) - 3.0).abs() < 1e-15);
        assert_eq!(n.scale(-1.0), 0.0);
        // empirical variance along each principal axis of diag(3, 1)
        let l = super::super::quadratic(3.0, 1.0, 0.0, super::super::Domain::new([-1.0, -1.0], [1.0, 1.0]));
        let mut rng = crate::rng::stream(1, 0);
        let draws: Vec<Point> = (0..20_000)
            .map(|_| n.sample_2d(&mut rng, &l, [0.0, 0.0]).unwrap())
            .collect();
        let var = |i: usize| draws.iter().map(|d| d[i] * d[i]).sum::<f64>() / draws.len() as f64;
        assert!((var(0) / 3.0 - 1.0).abs() < 0.05, "{}", var(0));
        assert!((var(1) / 1.0 - 1.0).abs() < 0.05, "{}", var(1));
    }
}
