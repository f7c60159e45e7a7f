//! Mixing-coefficient schedules for the InvAdam → Adam transition.

use serde::{Deserialize, Serialize};

/// Maps the global step `t` (and the current epoch) to the InvAdam share `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `alpha = max(0, 1 - rate * t)`.
    Linear { rate: f64 },
    /// `alpha = base^t`.
    Exponential { base: f64 },
    /// `alpha = 1` before `switch_epoch`, `0` from then on.
    FixedEpoch { switch_epoch: u64 },
    /// Constant mixing; `0` is Adam, `1` is InvAdam.
    ConstantAlpha { fixed_alpha: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Linear { rate: 8e-5 }
    }
}

impl Schedule {
    pub fn alpha_at(&self, t: u64, epoch: u64) -> f64 {
        let alpha = match *self {
            Schedule::Linear { rate } => linear_alpha(rate, t),
            Schedule::Exponential { base } => base.powf(t as f64),
            Schedule::FixedEpoch { switch_epoch } => {
                if epoch < switch_epoch {
                    1.0
                } else {
                    0.0
                }
            }
            Schedule::ConstantAlpha { fixed_alpha } => fixed_alpha,
        };
        if alpha.is_nan() {
            return 0.0;
        }
        alpha.clamp(0.0, 1.0)
    }

    /// First step at which the linear schedule is exactly zero, if it ever is.
    pub fn linear_cutoff(&self) -> Option<u64> {
        match *self {
            Schedule::Linear { rate } if rate > 0.0 => Some(linear_cutoff(rate)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Schedule::Linear { rate } if !(rate.is_finite() && rate >= 0.0) => {
                Err(format!("schedule.rate must be finite and >= 0, got {rate}"))
            }
            Schedule::Exponential { base } if !(base > 0.0 && base <= 1.0) => {
                Err(format!("schedule.base must lie in (0, 1], got {base}"))
            }
            Schedule::ConstantAlpha { fixed_alpha } if !(0.0..=1.0).contains(&fixed_alpha) => {
                Err(format!("schedule.fixed_alpha must lie in [0, 1], got {fixed_alpha}"))
            }
            _ => Ok(()),
        }
    }
}

/// `ceil(1/rate)`, robust to the reciprocal landing a few ulps below an integer
/// (`1/8e-5` evaluates to `12499.999999999998`).
fn linear_cutoff(rate: f64) -> u64 {
    let recip = 1.0 / rate;
    let nearest = recip.round();
    if (recip - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        recip.ceil() as u64
    }
}

fn linear_alpha(rate: f64, t: u64) -> f64 {
    if rate <= 0.0 {
        return 1.0;
    }
    if t >= linear_cutoff(rate) {
        return 0.0;
    }
    (1.0 - rate * t as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_hits_zero_at_twelve_thousand_five_hundred() {
        let s = Schedule::Linear { rate: 8e-5 };
        assert_eq!(s.alpha_at(12_500, 0), 0.0);
        assert!(s.alpha_at(12_499, 0) > 0.0);
        assert!((s.alpha_at(6250, 0) - 0.5).abs() < 1e-12);
        assert_eq!(s.linear_cutoff(), Some(12_500));
    }

    #[test]
    fn exponential_base_099() {
        let s = Schedule::Exponential { base: 0.99 };
        assert!((s.alpha_at(100, 0) - 0.366_032_341_273_229_2).abs() < 1e-12);
    }

    #[test]
    fn fixed_epoch_switch() {
        let s = Schedule::FixedEpoch { switch_epoch: 10 };
        assert_eq!(s.alpha_at(1, 9), 1.0);
        assert_eq!(s.alpha_at(1, 10), 0.0);
    }

    #[test]
    fn zero_rate_is_pure_invadam() {
        let s = Schedule::Linear { rate: 0.0 };
        assert_eq!(s.alpha_at(1_000_000, 0), 1.0);
        assert_eq!(s.linear_cutoff(), None);
    }

    #[test]
    fn validation() {
        assert!(Schedule::Exponential { base: 0.0 }.validate().is_err());
        assert!(Schedule::ConstantAlpha { fixed_alpha: 1.5 }.validate().is_err());
        assert!(Schedule::Linear { rate: -1.0 }.validate().is_err());
        assert!(Schedule::default().validate().is_ok());
    }
}
