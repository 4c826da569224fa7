//! Cross-entropy loss, SGD with heavy-ball momentum, and the mini-batch
//! training loop with validation tracking.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::predict_dataset;
use crate::network::{GradientSet, Network};
use crate::tensor::{Rng, Tensor};

/// Floor applied to probabilities inside the training log.
pub const CE_LOG_FLOOR: f64 = 1e-12;

/// Mean cross-entropy of softmax outputs and its gradient with respect to the logits.
///
/// With optional per-sample weights `w_i` the loss is
/// `−(1/N) Σ w_i ln max(p[i, y_i], 1e-12)` and the fused gradient is
/// `w_i (p_i − onehot(y_i)) / N`.
pub fn cross_entropy_loss(
    probs: &Tensor,
    labels: &[u8],
    weights: Option<&[f64]>,
) -> Result<(f64, Tensor)> {
    let (n, k) = probs.as_matrix("probabilities")?;
    if n != labels.len() {
        return Err(Error::arg(format!("{n} probability rows for {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::arg("cross-entropy needs at least one sample"));
    }
    if let Some(i) = labels.iter().position(|&y| y as usize >= k || y > 1) {
        return Err(Error::arg(format!("label {} at index {i} is not 0 or 1", labels[i])));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::arg(format!("{} weights for {n} samples", w.len())));
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n * k);
    for (i, (row, &y)) in probs.data().chunks_exact(k).zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        total -= w * (row[y as usize] as f64).max(CE_LOG_FLOOR).ln();
        for (c, &p) in row.iter().enumerate() {
            let target = if c == y as usize { 1.0 } else { 0.0 };
            grad.push((w * (p as f64 - target) * inv_n) as f32);
        }
    }
    Ok((total * inv_n, Tensor::from_vec(&[n, k], grad)?))
}

/// Per-sample weights `f_free / f_cancer` for cancer samples and 1 otherwise,
/// with frequencies taken over `labels`. All ones when a class is absent.
pub fn class_weights(labels: &[u8]) -> Vec<f64> {
    let cancer = labels.iter().filter(|&&y| y == 1).count();
    let free = labels.len() - cancer;
    let w = if cancer > 0 && free > 0 {
        free as f64 / cancer as f64
    } else {
        1.0
    };
    labels.iter().map(|&y| if y == 1 { w } else { 1.0 }).collect()
}

/// `v ← μ·v − η·g; w ← w + v`.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    velocity: &mut Tensor,
    grad: &Tensor,
    lr: f32,
    momentum: f32,
) -> Result<()> {
    param.expect_same_shape(velocity)?;
    param.expect_same_shape(grad)?;
    for ((w, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - lr * g;
        if *v != 0.0 {
            *w += *v;
        }
    }
    Ok(())
}

/// Applies one momentum step to every parameter of `net`.
pub fn apply_gradients(net: &mut Network, grads: &GradientSet, lr: f32, momentum: f32) -> Result<()> {
    let pairs = net.params_and_velocities_mut();
    if pairs.len() != grads.grads.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            grads.grads.len(),
            pairs.len()
        )));
    }
    for ((p, v), g) in pairs.into_iter().zip(&grads.grads) {
        sgd_momentum_step(p, v, g, lr, momentum)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    /// Number of mini-batch steps.
    Iterations(usize),
    /// Full passes over the training set; the last batch of an epoch may be partial.
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub budget: Budget,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
    /// Iterations between validation passes; the final iteration is always evaluated.
    pub eval_every: usize,
    /// Weight cancer samples by the per-batch `f_free / f_cancer` ratio.
    pub class_weighted: bool,
    /// Record wall-clock time in the log. Off by default so logs are reproducible.
    pub record_timing: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 128,
            learning_rate: 0.001,
            momentum: 0.9,
            budget: Budget::Iterations(11000),
            seed: 0,
            eval_every: 100,
            class_weighted: false,
            record_timing: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self, train_len: usize) -> usize {
        match self.budget {
            Budget::Iterations(n) => n,
            Budget::Epochs(e) => e * train_len.div_ceil(self.batch_size),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Milliseconds since training started; 0 unless timing is recorded.
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "iteration,split,loss,accuracy,elapsed_ms";

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iteration,
                r.split.as_str(),
                r.loss,
                r.accuracy,
                r.elapsed_ms
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network with the lowest validation loss seen.
    pub best: Network,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    /// Network after the last iteration.
    pub last: Network,
    pub log: TrainingLog,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// Training loss became non-finite; `last_good` is the best network so far
    /// (or the network before the failing step if no validation pass ran).
    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged {
        iteration: usize,
        loss: f64,
        last_good: Box<Network>,
        log: TrainingLog,
    },
}

/// Mean unweighted cross-entropy and accuracy (`p_cancer >= 0.5`) over a dataset.
pub fn dataset_loss(net: &Network, ds: &LabeledDataset, chunk: usize) -> Result<(f64, f64)> {
    let probs = predict_dataset(net, ds, chunk)?;
    let labels = ds.labels();
    let (loss, _) = cross_entropy_loss(&probs, &labels, None)?;
    Ok((loss, batch_accuracy(&probs, &labels)))
}

fn batch_accuracy(probs: &Tensor, labels: &[u8]) -> f64 {
    let correct = probs
        .data()
        .chunks_exact(2)
        .zip(labels)
        .filter(|(row, &y)| u8::from(row[1] >= 0.5) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Mini-batch SGD. The training order is reshuffled at the start of every
/// epoch from `cfg.seed`; a partial final batch is used as is.
pub fn train(
    mut net: Network,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    cfg: &TrainingConfig,
) -> std::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::arg("training and validation sets must be non-empty").into());
    }
    let want_hw = net.config().input_hw;
    for (name, ds) in [("training", train_set), ("validation", val_set)] {
        if ds.image_hw() != Some(want_hw) {
            return Err(Error::shape(format!(
                "{name} images are {:?}, network expects {want_hw:?}",
                ds.image_hw()
            ))
            .into());
        }
    }

    let started = cfg.record_timing.then(Instant::now);
    let elapsed = || started.map_or(0, |t| t.elapsed().as_millis() as u64);
    let total = cfg.total_iterations(train_set.len());
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = 0;
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, Network)> = None;

    for iteration in 1..=total {
        if cursor == 0 {
            rng.shuffle(&mut order);
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let (x, labels) = train_set.batch(&order[cursor..end])?;
        cursor = if end == order.len() { 0 } else { end };

        let (probs, trace) = net.forward(&x)?;
        let weights = cfg.class_weighted.then(|| class_weights(&labels));
        let (loss, d_logits) = cross_entropy_loss(&probs, &labels, weights.as_deref())?;
        if !loss.is_finite() {
            let last_good = best.map_or(net, |(_, _, n)| n);
            return Err(TrainError::Diverged {
                iteration,
                loss,
                last_good: Box::new(last_good),
                log,
            });
        }
        let grads = net.backward(&trace, &d_logits)?;
        apply_gradients(&mut net, &grads, cfg.learning_rate, cfg.momentum)?;
        log.records.push(LogRecord {
            iteration,
            split: Split::Train,
            loss,
            accuracy: batch_accuracy(&probs, &labels),
            elapsed_ms: elapsed(),
        });

        if iteration % cfg.eval_every == 0 || iteration == total {
            let (val_loss, val_acc) = dataset_loss(&net, val_set, cfg.batch_size)?;
            log.records.push(LogRecord {
                iteration,
                split: Split::Validation,
                loss: val_loss,
                accuracy: val_acc,
                elapsed_ms: elapsed(),
            });
            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, iteration, net.clone()));
            }
        }
    }

    let (best_val_loss, best_iteration, best_net) = match best {
        Some(b) => b,
        None => {
            // zero-iteration budget: evaluate the untouched network
            let (l, _) = dataset_loss(&net, val_set, cfg.batch_size)?;
            (l, 0, net.clone())
        }
    };
    Ok(TrainOutcome {
        best: best_net,
        best_iteration,
        best_val_loss,
        last: net,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SplitSpec};
    use crate::network::NetworkConfig;

    #[test]
    fn cross_entropy_examples() {
        let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let (l, _) = cross_entropy_loss(&p, &[0], None).unwrap();
        assert!(l.abs() <= 1e-12);

        let p = Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let (l, g) = cross_entropy_loss(&p, &[0, 1], None).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.data(), &[-0.25, 0.25, 0.25, -0.25]);

        assert!(matches!(cross_entropy_loss(&p, &[0, 2], None), Err(Error::Argument(_))));
        // floor keeps a zero probability finite
        let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let (l, _) = cross_entropy_loss(&p, &[1], None).unwrap();
        assert!((l + CE_LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn weighted_cross_entropy_scales_cancer_terms() {
        let p = Tensor::from_vec(&[3, 2], vec![0.2, 0.8, 0.9, 0.1, 0.6, 0.4]).unwrap();
        let labels = [1, 0, 0];
        let w = class_weights(&labels);
        assert_eq!(w, vec![2.0, 1.0, 1.0]);
        let (l, g) = cross_entropy_loss(&p, &labels, Some(&w)).unwrap();
        let want = -(2.0 * (0.8f32 as f64).ln() + (0.9f32 as f64).ln() + (0.6f32 as f64).ln()) / 3.0;
        assert!((l - want).abs() < 1e-12);
        assert!((g.data()[1] as f64 - 2.0 * (0.8f32 as f64 - 1.0) / 3.0).abs() < 1e-7);
    }

    #[test]
    fn momentum_examples() {
        let mut w = Tensor::full(&[1], 1.0).unwrap();
        let mut v = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::full(&[1], 1.0).unwrap();
        sgd_momentum_step(&mut w, &mut v, &g, 0.1, 0.0).unwrap();
        assert!((w.data()[0] - 0.9).abs() < 1e-7);
        assert!((v.data()[0] + 0.1).abs() < 1e-7);

        let mut w = Tensor::full(&[1], 1.0).unwrap();
        let mut v = Tensor::zeros(&[1]).unwrap();
        sgd_momentum_step(&mut w, &mut v, &g, 0.1, 0.9).unwrap();
        assert!((v.data()[0] + 0.1).abs() < 1e-7 && (w.data()[0] - 0.9).abs() < 1e-7);
        sgd_momentum_step(&mut w, &mut v, &g, 0.1, 0.9).unwrap();
        assert!((v.data()[0] + 0.19).abs() < 1e-6);
        assert!((w.data()[0] - 0.71).abs() < 1e-6);

        let mut w = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let before = w.clone();
        let mut v = Tensor::zeros(&[2]).unwrap();
        sgd_momentum_step(&mut w, &mut v, &Tensor::zeros(&[2]).unwrap(), 0.5, 0.9).unwrap();
        assert!(w.bitwise_eq(&before));

        assert!(sgd_momentum_step(&mut w, &mut v, &Tensor::zeros(&[3]).unwrap(), 0.1, 0.9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig { momentum: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let epochs = TrainingConfig { batch_size: 32, budget: Budget::Epochs(3), ..Default::default() };
        assert_eq!(epochs.total_iterations(100), 12);
    }

    fn tiny_data() -> (LabeledDataset, LabeledDataset) {
        let ds = generate_synthetic(40, (12, 12), 3).unwrap();
        let s = split(&ds, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        (s.train, s.val)
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (tr, _) = tiny_data();
        let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(1)).unwrap();
        let err = train(net, &tr, &LabeledDataset::default(), &TrainingConfig::default());
        assert!(matches!(err, Err(TrainError::Invalid(Error::Argument(_)))));
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let (tr, va) = tiny_data();
        let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(2)).unwrap();
        let cfg = TrainingConfig {
            batch_size: 8,
            learning_rate: 0.0,
            budget: Budget::Iterations(20),
            eval_every: 5,
            ..Default::default()
        };
        let out = train(net.clone(), &tr, &va, &cfg).unwrap();
        assert!(out.last.params_bitwise_eq(&net));
        let val: Vec<f64> = out.log.split(Split::Validation).map(|r| r.loss).collect();
        assert!(val.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn log_is_reproducible_and_best_is_no_worse_than_last() {
        let (tr, va) = tiny_data();
        let cfg = TrainingConfig {
            batch_size: 8,
            learning_rate: 0.01,
            budget: Budget::Iterations(30),
            eval_every: 4,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(5)).unwrap();
            train(net, &tr, &va, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert!(a.best.params_bitwise_eq(&b.best));
        let last_val = a.log.split(Split::Validation).last().unwrap().loss;
        assert!(a.best_val_loss <= last_val);
        let iters: Vec<usize> = a.log.split(Split::Train).map(|r| r.iteration).collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
        assert!(a.log.to_csv().starts_with("iteration,split,loss,accuracy,elapsed_ms\n"));
    }

    fn blob_run(iterations: usize) -> (TrainOutcome, LabeledDataset) {
        let ds = generate_synthetic(400, (12, 12), 11).unwrap();
        let s = split(&ds, &SplitSpec { seed: 2, ..Default::default() }).unwrap();
        let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(4)).unwrap();
        let cfg = TrainingConfig {
            batch_size: 32,
            learning_rate: 0.01,
            budget: Budget::Iterations(iterations),
            eval_every: 50,
            seed: 6,
            ..Default::default()
        };
        (train(net, &s.train, &s.val, &cfg).unwrap(), s.train)
    }

    #[test]
    fn tiny_network_learns_the_blob_task() {
        let (out, train_set) = blob_run(500);
        let (_, acc) = dataset_loss(&out.last, &train_set, 64).unwrap();
        assert!(acc > 0.95, "training accuracy {acc}");

        let losses: Vec<f64> = out.log.split(Split::Train).map(|r| r.loss).collect();
        let smoothed: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        assert!(smoothed.windows(2).all(|w| w[1] <= w[0]), "{smoothed:?}");
    }
}
