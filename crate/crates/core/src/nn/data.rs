use super::NnError;
use crate::rng::{self, streams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Index lists into a dataset. Disjoint, and together they cover every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n × dim`.
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

/// Train/val/test fractions used by the generators.
pub const DEFAULT_SPLIT: (f64, f64) = (0.64, 0.16);

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the rows in `idx` into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn per_class(n: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|k| n / classes + usize::from(k < n % classes))
        .collect()
}

fn make_split(n: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::SPLIT));
    let n_train = (DEFAULT_SPLIT.0 * n as f64).round() as usize;
    let n_val = (DEFAULT_SPLIT.1 * n as f64).round() as usize;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Split {
        train: order,
        val,
        test,
    }
}

fn check_n(n: usize) -> Result<(), NnError> {
    if n < 10 {
        return Err(NnError::InvalidDataset(format!("need at least 10 samples, got {n}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<(), NnError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(NnError::InvalidDataset(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Two interleaving half circles. Moon 0 is the upper unit arc, moon 1 the lower arc
/// shifted to `(1, 0.5)`; points are evenly spaced along each arc before noise.
pub fn make_two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset, NnError> {
    check_n(n)?;
    check_sigma(noise_sigma)?;
    let mut rng = rng::stream(seed, streams::DATA);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (label, count) in per_class(n, 2).into_iter().enumerate() {
        for i in 0..count {
            let t = if count > 1 {
                PI * i as f64 / (count - 1) as f64
            } else {
                0.0
            };
            let (x, y) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            inputs.push(x + noise_sigma * nx);
            inputs.push(y + noise_sigma * ny);
            labels.push(label);
        }
    }
    Ok(Dataset {
        inputs,
        dim: 2,
        labels,
        classes: 2,
        split: make_split(n, seed),
    })
}

/// `classes` interleaved arms, each sweeping 4 radians while the radius grows from 0 to 1.
pub fn make_spirals(n: usize, classes: usize, noise_sigma: f64, seed: u64) -> Result<Dataset, NnError> {
    check_n(n)?;
    check_sigma(noise_sigma)?;
    if classes < 2 {
        return Err(NnError::InvalidDataset(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let mut rng = rng::stream(seed, streams::DATA);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (label, count) in per_class(n, classes).into_iter().enumerate() {
        let phase = 2.0 * PI * label as f64 / classes as f64;
        for i in 0..count {
            let r = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let angle = phase + 4.0 * r;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            inputs.push(r * angle.sin() + noise_sigma * nx);
            inputs.push(r * angle.cos() + noise_sigma * ny);
            labels.push(label);
        }
    }
    Ok(Dataset {
        inputs,
        dim: 2,
        labels,
        classes,
        split: make_split(n, seed),
    })
}
