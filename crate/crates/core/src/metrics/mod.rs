//! Diagnostics: head diversity, head-masking redundancy, calibration and
//! predictive entropy. Each has a CSV emitter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attention::{argmax, SentenceClassifier};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::numeric::Tensor2;

/// Mean over examples of the mean pairwise distance between head
/// representations. Each tensor holds one example's `M × d` head outputs.
pub fn head_distance(reps: &[Tensor2]) -> Result<f64> {
    if reps.is_empty() {
        return Err(Error::invalid("head_distance", "no examples"));
    }
    let m = reps[0].rows();
    if m < 2 {
        return Err(Error::invalid("head_distance", format!("needs M >= 2 heads, got {m}")));
    }
    let mut total = 0.0;
    for z in reps {
        if z.shape() != reps[0].shape() {
            return Err(Error::shapes("head_distance", z.shape(), reps[0].shape()));
        }
        total += mean_pairwise(z);
    }
    Ok(total / reps.len() as f64)
}

fn mean_pairwise(z: &Tensor2) -> f64 {
    let m = z.rows();
    let mut sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            sum += crate::numeric::sq_dist(z.row(i), z.row(j)).sqrt();
        }
    }
    sum / (m * (m - 1) / 2) as f64
}

/// [`head_distance`] of the model's head outputs over `examples`.
pub fn model_head_distance(model: &SentenceClassifier, examples: &[Example]) -> Result<f64> {
    let reps = examples
        .iter()
        .map(|ex| Ok(model.forward_pass(&ex.tokens)?.heads))
        .collect::<Result<Vec<_>>>()?;
    head_distance(&reps)
}

/// Class probabilities for every example.
pub fn predict_all(model: &SentenceClassifier, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
    examples.iter().map(|ex| model.forward(&ex.tokens)).collect()
}

/// Fraction of correct argmax predictions.
pub fn accuracy(model: &SentenceClassifier, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("accuracy", "no examples"));
    }
    let mut correct = 0usize;
    for ex in examples {
        if model.predict(&ex.tokens)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Winning-class confidence and correctness per example.
pub fn confidences(probs: &[Vec<f64>], labels: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    if probs.len() != labels.len() {
        return Err(Error::shapes("confidences", (probs.len(), 0), (labels.len(), 0)));
    }
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let k = argmax(p);
            (p[k], k == y)
        })
        .unzip())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Number of equal-width bins on [0, 1].
    pub bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { bins: 10 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("calibration bins must be >= 1".into()));
        }
        Ok(())
    }

    /// Bin `m` covers `(m/B, (m+1)/B]`; bin 0 also takes 0.
    pub fn bin_of(&self, conf: f64) -> usize {
        let b = self.bins;
        let mut idx = ((conf * b as f64).ceil() as usize).saturating_sub(1).min(b - 1);
        while idx > 0 && conf <= idx as f64 / b as f64 {
            idx -= 1;
        }
        while idx + 1 < b && conf > (idx + 1) as f64 / b as f64 {
            idx += 1;
        }
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin: usize,
    pub count: usize,
    /// Accuracy inside the bin; 0 when empty.
    pub acc: f64,
    /// Mean confidence inside the bin; 0 when empty.
    pub conf: f64,
}

pub fn calibration_bins(
    confidences: &[f64],
    correct: &[bool],
    config: &CalibrationConfig,
) -> Result<Vec<CalibrationBin>> {
    config.validate()?;
    if confidences.len() != correct.len() {
        return Err(Error::shapes(
            "calibration",
            (confidences.len(), 1),
            (correct.len(), 1),
        ));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid("calibration", format!("confidence {c} outside [0, 1]")));
    }
    let mut bins: Vec<CalibrationBin> = (0..config.bins)
        .map(|bin| CalibrationBin {
            bin,
            count: 0,
            acc: 0.0,
            conf: 0.0,
        })
        .collect();
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = &mut bins[config.bin_of(c)];
        b.count += 1;
        b.conf += c;
        if ok {
            b.acc += 1.0;
        }
    }
    for b in &mut bins {
        if b.count > 0 {
            b.acc /= b.count as f64;
            b.conf /= b.count as f64;
        }
    }
    Ok(bins)
}

fn weighted_sum(bins: &[CalibrationBin], term: impl Fn(&CalibrationBin) -> f64) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * term(b))
        .sum()
}

/// Expected calibration error `Σ |B_m|/n · |acc(B_m) − conf(B_m)|`.
pub fn ece(confidences: &[f64], correct: &[bool], config: &CalibrationConfig) -> Result<f64> {
    let bins = calibration_bins(confidences, correct, config)?;
    Ok(weighted_sum(&bins, |b| (b.acc - b.conf).abs()))
}

/// Overconfidence error `Σ |B_m|/n · conf(B_m) · max(conf(B_m) − acc(B_m), 0)`.
pub fn oe(confidences: &[f64], correct: &[bool], config: &CalibrationConfig) -> Result<f64> {
    let bins = calibration_bins(confidences, correct, config)?;
    Ok(weighted_sum(&bins, |b| b.conf * (b.conf - b.acc).max(0.0)))
}

pub fn calibration_csv(bins: &[CalibrationBin]) -> String {
    let mut out = String::from("bin,count,acc,conf\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.bin, b.count, b.acc, b.conf);
    }
    out
}

/// `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Per-example predictive entropies sorted ascending, each paired with the
/// cumulative fraction of examples at or below it.
pub fn entropy_cdf(probs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let mut hs = Vec::with_capacity(probs.len());
    for (i, p) in probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.is_empty() || (sum - 1.0).abs() > 1e-6 || p.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid(
                "entropy_cdf",
                format!("row {i} is not a probability vector (sum {sum})"),
            ));
        }
        hs.push(entropy(p));
    }
    hs.sort_by(f64::total_cmp);
    let n = hs.len() as f64;
    Ok(hs
        .into_iter()
        .enumerate()
        .map(|(k, h)| (h, (k + 1) as f64 / n))
        .collect())
}

pub fn entropy_cdf_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("entropy,cdf\n");
    for (h, f) in curve {
        let _ = writeln!(out, "{h},{f}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRecord {
    pub head: usize,
    pub baseline: f64,
    pub masked: f64,
    /// `baseline − masked`; positive when the head mattered.
    pub delta: f64,
}

/// Accuracy drop from masking each head in turn. Heads already masked in
/// `model` stay masked throughout.
pub fn redundancy_report(model: &SentenceClassifier, examples: &[Example]) -> Result<Vec<RedundancyRecord>> {
    let baseline = accuracy(model, examples)?;
    (0..model.heads())
        .map(|head| {
            let masked = accuracy(&model.mask_head(head)?, examples)?;
            Ok(RedundancyRecord {
                head,
                baseline,
                masked,
                delta: baseline - masked,
            })
        })
        .collect()
}

pub fn redundancy_csv(records: &[RedundancyRecord]) -> String {
    let mut out = String::from("head,baseline,masked,delta\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.head, r.baseline, r.masked, r.delta);
    }
    out
}

/// Fraction of heads whose masking moves accuracy by less than `threshold`.
pub fn redundant_fraction(records: &[RedundancyRecord], threshold: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.delta.abs() < threshold).count() as f64 / records.len() as f64
}

#[cfg(test)]
mod tests;
