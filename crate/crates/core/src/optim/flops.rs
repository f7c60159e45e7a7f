//! Per-iteration floating-point operation count of the optimizer update.

use super::OptimizerKind;
use serde::Serialize;

/// FLOPs per parameter, by phase of the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopBreakdown {
    /// Moment EMAs: 2 mul + 1 add for `m`, 1 square + 2 mul + 1 add for `v`.
    pub moments: u64,
    /// Two bias-correction divisions.
    pub bias_correction: u64,
    /// Update direction(s): sqrt, eps add, divide; the inverse branch reuses the sqrt and adds one multiply.
    pub update: u64,
    /// `alpha * u_inv + (1 - alpha) * u`.
    pub fusion: u64,
    /// Scale by the learning rate and subtract (plus decoupled decay for AdamW).
    pub weight_update: u64,
}

impl FlopBreakdown {
    pub fn per_parameter(&self) -> u64 {
        self.moments + self.bias_correction + self.update + self.fusion + self.weight_update
    }
}

/// Breakdown for one optimizer. `alpha_active` only matters for DualAdam: once
/// alpha reaches zero it runs the plain Adam path (the alpha check itself is counted as free).
pub fn flop_breakdown(kind: OptimizerKind, alpha_active: bool) -> FlopBreakdown {
    let adam = FlopBreakdown {
        moments: 7,
        bias_correction: 2,
        // sqrt, add, div, mul by lr, sub
        update: 5,
        fusion: 0,
        weight_update: 0,
    };
    match kind {
        OptimizerKind::Adam => adam,
        OptimizerKind::AdamW => FlopBreakdown {
            weight_update: 2,
            ..adam
        },
        OptimizerKind::InvAdam => FlopBreakdown {
            moments: 7,
            bias_correction: 2,
            update: 2,
            fusion: 0,
            weight_update: 2,
        },
        OptimizerKind::DualAdam if alpha_active => FlopBreakdown {
            moments: 7,
            bias_correction: 2,
            update: 4,
            fusion: 3,
            weight_update: 2,
        },
        OptimizerKind::DualAdam => adam,
    }
}

pub fn flops_per_iteration(p: u64, kind: OptimizerKind, alpha_active: bool) -> u64 {
    p * flop_breakdown(kind, alpha_active).per_parameter()
}

/// Extra DualAdam cost relative to the `6 b p` forward/backward budget: `4p / (6 b p)`.
pub fn overhead_fraction(batch_size: u64) -> f64 {
    let extra = flop_breakdown(OptimizerKind::DualAdam, true).per_parameter()
        - flop_breakdown(OptimizerKind::Adam, false).per_parameter();
    extra as f64 / (6.0 * batch_size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn million_parameters() {
        assert_eq!(
            flops_per_iteration(1_000_000, OptimizerKind::DualAdam, true),
            18_000_000
        );
        assert_eq!(flops_per_iteration(1_000_000, OptimizerKind::Adam, false), 14_000_000);
        assert_eq!(
            flops_per_iteration(1_000_000, OptimizerKind::DualAdam, false),
            14_000_000
        );
    }

    #[test]
    fn overhead_at_batch_128() {
        assert!((overhead_fraction(128) - 0.005_208_333_333_333_333).abs() < 1e-15);
    }
}
