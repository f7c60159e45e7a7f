use super::{Activation, Dataset, Network, NnError};
use crate::artifact::{csv_writer, num};
use crate::optim::{self, OptimError, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng::{self, streams};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
}

/// One row per completed epoch; `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    pub gen_gap: f64,
    /// Blend weight used by the epoch's last step.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub records: Vec<EpochRecord>,
    pub theta: Vec<f64>,
    pub iterations: u64,
    pub diverged: bool,
}

/// Sidecar describing a saved parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaHeader {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl TrainRun {
    pub const CSV_HEADER: [&'static str; 6] = ["epoch", "train_loss", "val_loss", "test_acc", "gen_gap", "alpha"];

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv_writer(w);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                num(r.train_loss),
                num(r.val_loss),
                num(r.test_acc),
                num(r.gen_gap),
                num(r.alpha),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn header(&self) -> ThetaHeader {
        ThetaHeader {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            seed: self.seed,
        }
    }

    /// Rebuilds the trained network.
    pub fn network(&self) -> Result<Network, NnError> {
        let mut net = Network::zeros(&self.layer_sizes, self.activation)?;
        net.set_params(&self.theta)?;
        Ok(net)
    }
}

/// Writes θ as one value per line to `path` and the header to `path` with a `.json` extension.
pub fn save_theta(path: &Path, header: &ThetaHeader, theta: &[f64]) -> Result<PathBuf, NnError> {
    let mut text = String::with_capacity(theta.len() * 24);
    for v in theta {
        text.push_str(&num(*v));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| NnError::io(path, e))?;
    let side = path.with_extension("json");
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(&side, json + "\n").map_err(|e| NnError::io(&side, e))?;
    Ok(side)
}

pub fn load_theta(path: &Path) -> Result<(ThetaHeader, Vec<f64>), NnError> {
    let text = fs::read_to_string(path).map_err(|e| NnError::io(path, e))?;
    let side = path.with_extension("json");
    let raw = fs::read_to_string(&side).map_err(|e| NnError::io(&side, e))?;
    let header: ThetaHeader =
        serde_json::from_str(&raw).map_err(|e| NnError::Format(format!("{}: {e}", side.display())))?;
    let theta = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| NnError::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let expect = super::param_count(&header.layer_sizes);
    if theta.len() != expect {
        return Err(NnError::DimensionMismatch {
            what: "saved parameter vector",
            expected: expect,
            found: theta.len(),
        });
    }
    Ok((header, theta))
}

/// Number of optimizer steps `train` takes, counting the final partial batch.
pub fn total_iterations(train_len: usize, batch_size: usize, epochs: u64) -> u64 {
    if batch_size == 0 {
        return 0;
    }
    train_len.div_ceil(batch_size) as u64 * epochs
}

/// Linear switching rate that brings α to zero after `fraction` of `iterations`.
pub fn rate_for_fraction(iterations: u64, fraction: f64) -> f64 {
    1.0 / (fraction * iterations as f64)
}

/// The epoch-`k` order of the training indices depends only on `(seed, k)`.
pub fn epoch_order(train: &[usize], seed: u64, epoch: u64) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut rng::stream(seed, streams::SHUFFLE_BASE + epoch));
    order
}

/// Mini-batch training with a fixed epoch budget.
///
/// A non-finite loss or gradient stops the run; the partial record comes back with
/// `diverged` set.
pub fn train(net: &Network, data: &Dataset, cfg: &OptimizerConfig, tc: &TrainConfig) -> Result<TrainRun, NnError> {
    if tc.epochs == 0 {
        return Err(NnError::InvalidTrain("epochs must be at least 1".into()));
    }
    if tc.batch_size == 0 || tc.batch_size > data.split.train.len() {
        return Err(NnError::InvalidTrain(format!(
            "batch_size must be in 1..={}, got {}",
            data.split.train.len(),
            tc.batch_size
        )));
    }
    if data.dim != net.input_dim() || data.classes != net.classes() {
        return Err(NnError::InvalidTrain(format!(
            "network {:?} does not fit data with {} inputs and {} classes",
            net.layer_sizes(),
            data.dim,
            data.classes
        )));
    }
    cfg.validate()?;

    let (train_x, train_y) = data.gather(&data.split.train);
    let (val_x, val_y) = data.gather(&data.split.val);
    let (test_x, test_y) = data.gather(&data.split.test);

    let mut net = net.clone();
    let mut state = OptimizerState::new(net.num_params());
    let mut records = Vec::with_capacity(tc.epochs as usize);
    let mut diverged = false;
    let mut alpha = cfg.alpha(1, 0);

    'epochs: for epoch in 0..tc.epochs {
        let order = epoch_order(&data.split.train, tc.seed, epoch);
        for chunk in order.chunks(tc.batch_size) {
            let (x, y) = data.gather(chunk);
            let (loss, g) = net.loss_and_grad(&x, &y)?;
            if !loss.is_finite() {
                diverged = true;
                break 'epochs;
            }
            match optim::step(&mut state, net.params_mut(), &g, cfg, epoch) {
                Ok(r) => alpha = r.alpha,
                Err(OptimError::NonFiniteGradient { .. }) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
        }
        let train_loss = net.loss(&train_x, &train_y)?;
        let val_loss = net.loss(&val_x, &val_y)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            diverged = true;
            break;
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            test_acc: net.accuracy(&test_x, &test_y)?,
            gen_gap: val_loss - train_loss,
            alpha,
        });
    }

    Ok(TrainRun {
        optimizer: cfg.kind,
        seed: tc.seed,
        layer_sizes: net.layer_sizes().to_vec(),
        activation: net.activation(),
        records,
        theta: net.params().to_vec(),
        iterations: state.t(),
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::make_two_moons;

    fn setup() -> (Network, Dataset) {
        let data = make_two_moons(100, 0.1, 0).unwrap();
        let net = Network::init(&[2, 8, 2], Activation::Tanh, 0).unwrap();
        (net, data)
    }

    #[test]
    fn preconditions() {
        let (net, data) = setup();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 1e-2);
        let mut tc = TrainConfig {
            epochs: 0,
            batch_size: 16,
            seed: 0,
        };
        assert!(matches!(train(&net, &data, &cfg, &tc), Err(NnError::InvalidTrain(_))));
        tc.epochs = 1;
        tc.batch_size = 65;
        assert!(matches!(train(&net, &data, &cfg, &tc), Err(NnError::InvalidTrain(_))));
    }

    #[test]
    fn records_are_consistent() {
        let (net, data) = setup();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 1e-2);
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 16,
            seed: 3,
        };
        let run = train(&net, &data, &cfg, &tc).unwrap();
        assert_eq!(run.records.len(), 5);
        assert_eq!(run.iterations, total_iterations(64, 16, 5));
        assert!(run.records.windows(2).all(|w| w[0].epoch < w[1].epoch));
        assert!(run.records.iter().all(|r| r.gen_gap == r.val_loss - r.train_loss));
        assert!(run.last().unwrap().train_loss < run.records[0].train_loss);
    }

    #[test]
    fn shuffle_ignores_the_optimizer() {
        let train_idx: Vec<usize> = (0..20).collect();
        assert_eq!(epoch_order(&train_idx, 1, 4), epoch_order(&train_idx, 1, 4));
        assert_ne!(epoch_order(&train_idx, 1, 4), epoch_order(&train_idx, 1, 5));
    }

    #[test]
    fn exploding_lr_is_flagged() {
        let (_, data) = setup();
        let net = Network::init(&[2, 8, 8, 2], Activation::Relu, 0).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 1e300);
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 8,
            seed: 0,
        };
        let run = train(&net, &data, &cfg, &tc).unwrap();
        assert!(run.diverged);
        assert!(run.records.len() < 50);
    }

    #[test]
    fn theta_round_trip() {
        let (net, data) = setup();
        let cfg = OptimizerConfig::new(OptimizerKind::DualAdam, 1e-2);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 9,
        };
        let run = train(&net, &data, &cfg, &tc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.txt");
        save_theta(&path, &run.header(), &run.theta).unwrap();
        let (header, theta) = load_theta(&path).unwrap();
        assert_eq!(header, run.header());
        assert_eq!(theta, run.theta);
        assert!(matches!(
            load_theta(&dir.path().join("missing.txt")),
            Err(NnError::Io { .. })
        ));
    }

    #[test]
    fn rate_for_fraction_hits_zero_on_time() {
        let rate = rate_for_fraction(1000, 0.4);
        let s = crate::optim::Schedule::Linear { rate };
        assert_eq!(s.linear_cutoff(), Some(400));
    }
}
