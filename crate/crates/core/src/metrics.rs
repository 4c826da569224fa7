//! Confusion matrix, sensitivity/specificity/PPV/TPR/F1, and the
//! class-frequency-weighted log-loss. The positive class is label 1 (cancer).
//!
//! Ratios with a zero denominator are undefined: the functions return
//! `None` and [`MetricsReport`] carries `NaN` plus a named flag.

use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// Probabilities are clipped to `[LOG_LOSS_EPS, 1 − LOG_LOSS_EPS]` before the log.
pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Fixed-width text block: rows are the true class, columns the prediction.
    pub fn render(&self) -> String {
        let w = [self.tp, self.fp, self.tn, self.fn_]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(9);
        format!(
            "Confusion matrix (rows: true class, columns: predicted)\n\
             {:>12} {:>w$} {:>w$}\n\
             {:>12} {:>w$} {:>w$}\n\
             {:>12} {:>w$} {:>w$}\n",
            "",
            "cancer",
            "free",
            "cancer",
            self.tp,
            self.fn_,
            "free",
            self.fp,
            self.tn,
        )
    }
}

fn check_labels(values: &[u8], what: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::arg(format!("{what}[{i}] = {} is not 0 or 1", values[i]))),
        None => Ok(()),
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::arg("confusion matrix needs at least one sample"));
    }
    check_labels(preds, "preds")?;
    check_labels(labels, "labels")?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, _) => cm.fp += 1,
            (_, 0) => cm.tn += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// TP / (TP + FN).
pub fn sensitivity(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// TN / (TN + FP).
pub fn specificity(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tn, cm.tn + cm.fp)
}

/// TP / (TP + FP).
pub fn ppv(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fp)
}

/// Same quantity as [`sensitivity`].
pub fn tpr(cm: &ConfusionMatrix) -> Option<f64> {
    sensitivity(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp + cm.tn, cm.total())
}

/// Harmonic mean `2·ppv·tpr / (ppv + tpr)`; undefined when both are 0.
pub fn f1(ppv: f64, tpr: f64) -> Option<f64> {
    let den = ppv + tpr;
    (den > 0.0).then(|| 2.0 * ppv * tpr / den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedLogLoss {
    pub value: f64,
    /// False when one class is absent: `value` is then the unweighted mean.
    pub weight_defined: bool,
    /// Weight applied to cancer-class terms (`f_free / f_cancer`).
    pub cancer_weight: f64,
}

/// `−(1/N) Σ w(c_i) · ln q_i`, where `q_i` is the clipped predicted
/// probability of sample `i`'s true class, `w(cancer) = f_free / f_cancer`
/// over the evaluated set and `w(free) = 1`.
pub fn weighted_log_loss(probs: &Tensor, labels: &[u8]) -> Result<WeightedLogLoss> {
    let true_probs = true_class_probs(probs, labels)?;
    let n_cancer = labels.iter().filter(|&&y| y == 1).count();
    let n_free = labels.len() - n_cancer;
    let weight_defined = n_cancer > 0 && n_free > 0;
    let cancer_weight = if weight_defined {
        n_free as f64 / n_cancer as f64
    } else {
        1.0
    };
    let total: f64 = true_probs
        .iter()
        .zip(labels)
        .map(|(&q, &y)| {
            let w = if y == 1 { cancer_weight } else { 1.0 };
            -w * q.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS).ln()
        })
        .sum();
    Ok(WeightedLogLoss {
        value: total / labels.len() as f64,
        weight_defined,
        cancer_weight,
    })
}

/// Probability assigned to each sample's true class, as `f64`.
pub fn true_class_probs(probs: &Tensor, labels: &[u8]) -> Result<Vec<f64>> {
    let (n, k) = probs.as_matrix("probabilities")?;
    if k != 2 {
        return Err(Error::shape(format!("binary probabilities must be [N, 2], got {}", probs.shape())));
    }
    if n != labels.len() {
        return Err(Error::arg(format!("{n} probability rows for {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::arg("log-loss needs at least one sample"));
    }
    check_labels(labels, "labels")?;
    Ok(probs
        .data()
        .chunks_exact(2)
        .zip(labels)
        .map(|(row, &y)| row[y as usize] as f64)
        .collect())
}

/// Hard decisions: cancer when `p_cancer >= threshold`.
pub fn threshold_predictions(probs: &Tensor, threshold: f64) -> Vec<u8> {
    probs
        .data()
        .chunks_exact(2)
        .map(|row| u8::from(row[1] as f64 >= threshold))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub tpr: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub weighted_log_loss: f64,
    pub confusion: ConfusionMatrix,
    pub n: u64,
    pub n_cancer: u64,
    pub n_free: u64,
    pub threshold: f64,
    pub flags: Vec<String>,
}

impl MetricsReport {
    /// Assembles every metric from probabilities and labels.
    pub fn from_probs(probs: &Tensor, labels: &[u8], threshold: f64) -> Result<Self> {
        let preds = threshold_predictions(probs, threshold);
        let cm = confusion(&preds, labels)?;
        let loss = weighted_log_loss(probs, labels)?;
        let mut flags = Vec::new();
        let mut take = |v: Option<f64>, name: &str| {
            v.unwrap_or_else(|| {
                flags.push(format!("{name}_undefined"));
                f64::NAN
            })
        };
        let sens = take(sensitivity(&cm), "sensitivity");
        let spec = take(specificity(&cm), "specificity");
        let p = take(ppv(&cm), "ppv");
        let f = if p.is_nan() || sens.is_nan() {
            take(None, "f1")
        } else {
            take(f1(p, sens), "f1")
        };
        let acc = take(accuracy(&cm), "accuracy");
        if !loss.weight_defined {
            flags.push("weighted_log_loss_weight_undefined_unweighted_fallback".into());
        }
        Ok(MetricsReport {
            sensitivity: sens,
            specificity: spec,
            ppv: p,
            tpr: sens,
            f1: f,
            accuracy: acc,
            weighted_log_loss: loss.value,
            confusion: cm,
            n: labels.len() as u64,
            n_cancer: cm.tp + cm.fn_,
            n_free: cm.tn + cm.fp,
            threshold,
            flags,
        })
    }

    /// Flat JSON object; undefined metrics serialize as `null`.
    pub fn to_json(&self) -> String {
        let num = |v: f64| {
            if v.is_finite() {
                serde_json::Value::from(v)
            } else {
                serde_json::Value::Null
            }
        };
        let obj = serde_json::json!({
            "sensitivity": num(self.sensitivity),
            "specificity": num(self.specificity),
            "ppv": num(self.ppv),
            "tpr": num(self.tpr),
            "f1": num(self.f1),
            "accuracy": num(self.accuracy),
            "weighted_log_loss": num(self.weighted_log_loss),
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "tn": self.confusion.tn,
            "fn": self.confusion.fn_,
            "n": self.n,
            "threshold": self.threshold,
            "flags": self.flags,
        });
        serde_json::to_string_pretty(&obj).expect("report serializes")
    }

    /// Summary table plus the confusion matrix block.
    pub fn render_text(&self) -> String {
        let fmt = |v: f64| if v.is_nan() { "undefined".to_string() } else { format!("{v:.4}") };
        let mut s = format!(
            "{:<12} {:<12} {:<12} {:<12} {:<12}\n{:<12} {:<12} {:<12} {:<12} {:<12}\n\n",
            "Sensitivity",
            "Specificity",
            "F1",
            "Accuracy",
            "Log-Loss",
            fmt(self.sensitivity),
            fmt(self.specificity),
            fmt(self.f1),
            fmt(self.accuracy),
            fmt(self.weighted_log_loss),
        );
        s.push_str(&self.confusion.render());
        s.push_str(&format!("precision (PPV) {}\n", fmt(self.ppv)));
        s
    }
}

/// Runs the network over `dataset` in chunks and reports every metric.
pub fn evaluate(net: &Network, dataset: &LabeledDataset, threshold: f64) -> Result<MetricsReport> {
    let probs = predict_dataset(net, dataset, 64)?;
    MetricsReport::from_probs(&probs, &dataset.labels(), threshold)
}

/// Probabilities `[N, 2]` for every sample, computed `chunk` samples at a time.
pub fn predict_dataset(net: &Network, dataset: &LabeledDataset, chunk: usize) -> Result<Tensor> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate an empty dataset"));
    }
    let chunk = chunk.max(1);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(2 * dataset.len());
    for part in idx.chunks(chunk) {
        let (x, _) = dataset.batch(part)?;
        out.extend_from_slice(net.predict(&x)?.data());
    }
    Tensor::from_vec(&[dataset.len(), 2], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs_for(p_true: &[f32], labels: &[u8]) -> Tensor {
        let data = p_true
            .iter()
            .zip(labels)
            .flat_map(|(&q, &y)| if y == 1 { [1.0 - q, q] } else { [q, 1.0 - q] })
            .collect();
        Tensor::from_vec(&[labels.len(), 2], data).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (2, 1, 0, 0));
        let cm = confusion(&[0, 0, 1], &[1, 1, 0]).unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn ratio_examples() {
        let cm = ConfusionMatrix { tp: 87, fn_: 13, tn: 991, fp: 9 };
        assert_eq!(sensitivity(&cm), Some(0.87));
        assert_eq!(specificity(&cm), Some(0.991));
        let cm = ConfusionMatrix { tp: 5, ..Default::default() };
        assert_eq!(sensitivity(&cm), Some(1.0));
        assert_eq!(specificity(&cm), None);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(1.0, 1.0), Some(1.0));
        assert!((f1(0.3, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!((f1(0.5, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1(0.0, 0.0), None);
    }

    #[test]
    fn weighted_log_loss_three_samples() {
        let labels = [1, 0, 0];
        let p = probs_for(&[0.8, 0.9, 0.6], &labels);
        let l = weighted_log_loss(&p, &labels).unwrap();
        assert!(l.weight_defined);
        assert_eq!(l.cancer_weight, 2.0);
        // computed directly from f32 inputs
        let q = |x: f32| x as f64;
        let want = -(2.0 * q(0.8).ln() + q(0.9).ln() + q(0.6).ln()) / 3.0;
        assert!((l.value - want).abs() < 1e-9);
        assert!((l.value - 0.354158).abs() < 1e-6);
    }

    #[test]
    fn weighted_log_loss_bounds() {
        let labels = [1, 0, 1, 0];
        let perfect = probs_for(&[1.0; 4], &labels);
        let l = weighted_log_loss(&perfect, &labels).unwrap();
        assert!(l.value <= 3.5e-14 && l.value > 0.0);

        let uniform = probs_for(&[0.5; 4], &labels);
        let l = weighted_log_loss(&uniform, &labels).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_class_falls_back_to_unweighted() {
        let labels = [0, 0];
        let l = weighted_log_loss(&probs_for(&[0.5, 0.5], &labels), &labels).unwrap();
        assert!(!l.weight_defined);
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
        let r = MetricsReport::from_probs(&probs_for(&[0.5, 0.5], &labels), &labels, 0.5).unwrap();
        assert!(r.sensitivity.is_nan());
        assert!(r.flags.iter().any(|f| f == "sensitivity_undefined"));
        assert!(r.flags.iter().any(|f| f.starts_with("weighted_log_loss")));
        assert!(r.to_json().contains("\"sensitivity\": null"));
    }

    #[test]
    fn constant_half_predictor_flags_everything_positive() {
        let labels = [1, 0, 1, 0];
        let r = MetricsReport::from_probs(&probs_for(&[0.5; 4], &labels), &labels, 0.5).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.specificity, 0.0);
        assert_eq!(r.tpr.to_bits(), r.sensitivity.to_bits());
    }

    #[test]
    fn json_has_every_key() {
        let labels = [1, 0];
        let r = MetricsReport::from_probs(&probs_for(&[0.9, 0.8], &labels), &labels, 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "sensitivity", "specificity", "ppv", "tpr", "f1", "accuracy", "weighted_log_loss",
            "tp", "fp", "tn", "fn", "n", "threshold", "flags",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let text = r.render_text();
        for name in ["Sensitivity", "Specificity", "F1"] {
            assert!(text.contains(name));
        }
    }

    proptest! {
        #[test]
        fn f1_between_min_and_mean(p in 1e-6f64..=1.0, t in 1e-6f64..=1.0) {
            let f = f1(p, t).unwrap();
            prop_assert!(f >= p.min(t) - 1e-15);
            prop_assert!(f <= (p * t).sqrt() + 1e-15);
            prop_assert!((p * t).sqrt() <= (p + t) / 2.0 + 1e-15);
        }

        #[test]
        fn ratios_in_unit_interval(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..100)) {
            let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let cm = confusion(&preds, &labels).unwrap();
            prop_assert_eq!(cm.total(), preds.len() as u64);
            for v in [sensitivity(&cm), specificity(&cm), ppv(&cm), accuracy(&cm)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
