//! MPJPE, per-class breakdowns and classification accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use cgap2_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn pose_shape(pred: &[usize], target: &[usize]) -> Result<usize> {
    if pred != target || pred.len() != 3 || pred[2] != 3 {
        return Err(Error::Data(format!("pose batches disagree: {pred:?} vs {target:?}")));
    }
    Ok(pred[0])
}

/// Mean Euclidean joint error of each sample, in the poses' units.
pub fn per_sample_errors<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>> {
    let n = pose_shape(pred.shape(), target.shape())?;
    let joints = pred.shape()[1];
    let (p, t) = (pred.data(), target.data());
    Ok((0..n)
        .map(|s| {
            let mut total = 0.0;
            for j in 0..joints {
                let o = (s * joints + j) * 3;
                let sq: f64 = (0..3)
                    .map(|c| {
                        let d = p[o + c].to_f64_lossy() - t[o + c].to_f64_lossy();
                        d * d
                    })
                    .sum();
                total += sq.sqrt();
            }
            total / joints as f64
        })
        .collect())
}

/// Mean over samples of the per-sample mean joint distance.
pub fn mpjpe<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let errs = per_sample_errors(pred, target)?;
    if errs.is_empty() {
        return Err(Error::Data("mpjpe of an empty batch".into()));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `logits` (`[N, K]`) whose argmax equals the label.
pub fn accuracy(logits: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::Data(format!("logits {shape:?} vs {} labels", labels.len())));
    }
    let k = shape[1];
    let hits = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub mpjpe: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_mpjpe: f64,
    /// Only classes with at least one sample appear.
    pub per_class: BTreeMap<usize, ClassStat>,
    pub accuracy: Option<f64>,
    pub class_names: Vec<String>,
}

/// Groups per-sample errors by label and reports per-class means with their
/// sample-weighted average.
pub fn mpjpe_per_class(sample_errors: &[f64], labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    if sample_errors.len() != labels.len() || labels.is_empty() {
        return Err(Error::Data(format!(
            "{} errors vs {} labels",
            sample_errors.len(),
            labels.len()
        )));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&e, &l) in sample_errors.iter().zip(labels) {
        let entry = sums.entry(l).or_default();
        entry.0 += e;
        entry.1 += 1;
    }
    let per_class: BTreeMap<_, _> = sums
        .into_iter()
        .map(|(c, (s, n))| (c, ClassStat { mpjpe: s / n as f64, count: n }))
        .collect();
    let total: usize = per_class.values().map(|s| s.count).sum();
    let overall = per_class.values().map(|s| s.mpjpe * s.count as f64).sum::<f64>() / total as f64;
    Ok(EvalReport {
        overall_mpjpe: overall,
        per_class,
        accuracy: None,
        class_names: class_names.to_vec(),
    })
}

impl EvalReport {
    fn class_label(&self, c: usize) -> String {
        self.class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
    }

    /// Table-style CSV: a header of class names plus `Avg`, then one MPJPE row
    /// and one sample-count row.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["metric".to_string()];
        header.extend(self.per_class.keys().map(|&c| self.class_label(c)));
        header.push("Avg".into());
        let mut out = header.join(",");
        out.push('\n');
        let _ = write!(out, "mpjpe_mm");
        for s in self.per_class.values() {
            let _ = write!(out, ",{:.4}", s.mpjpe);
        }
        let _ = writeln!(out, ",{:.4}", self.overall_mpjpe);
        let _ = write!(out, "count");
        for s in self.per_class.values() {
            let _ = write!(out, ",{}", s.count);
        }
        let total: usize = self.per_class.values().map(|s| s.count).sum();
        let _ = writeln!(out, ",{total}");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
