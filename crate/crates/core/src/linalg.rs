//! Dense helpers for the 2×2 symmetric case and plain vectors.

/// Eigen-decomposition of a symmetric 2×2 matrix `[[a, b], [b, c]]`.
///
/// Eigenvalues are returned in descending order with unit eigenvectors.
pub fn sym_eig2(h: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, c) = (h[0][0], 0.5 * (h[0][1] + h[1][0]), h[1][1]);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = mean + radius;
    let l2 = mean - radius;
    if b == 0.0 {
        return if a >= c {
            ([a, c], [[1.0, 0.0], [0.0, 1.0]])
        } else {
            ([c, a], [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    // (A − l1 I) v = 0 ⇒ v ∝ (b, l1 − a) or (l1 − c, b); take the better conditioned one.
    let v1 = if (l1 - a).abs() > (l1 - c).abs() {
        [b, l1 - a]
    } else {
        [l1 - c, b]
    };
    let n = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
    let v1 = [v1[0] / n, v1[1] / n];
    let v2 = [-v1[1], v1[0]];
    ([l1, l2], [v1, v2])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        let (l, v) = sym_eig2([[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(l, [3.0, 1.0]);
        assert_eq!(v[0], [0.0, 1.0]);
    }

    #[test]
    fn rotated() {
        // diag(3, 1) rotated by 45°: [[2, 1], [1, 2]]
        let (l, v) = sym_eig2([[2.0, 1.0], [1.0, 2.0]]);
        assert!((l[0] - 3.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0][0].abs() - s).abs() < 1e-14 && (v[0][1].abs() - s).abs() < 1e-14);
        assert!(v[0][0] * v[0][1] > 0.0);
    }
}
