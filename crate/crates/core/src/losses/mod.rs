//! Training objective: predicate and entity cross entropy plus focal
//! supervision of the confidence estimates at every stage.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Floor on probabilities before the log in cross entropy.
pub const CE_FLOOR: f64 = 1e-12;
/// Scores are clamped to `[SCORE_CLAMP, 1 − SCORE_CLAMP]` before logs.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Which objective supervises the confidence scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RceLoss {
    #[default]
    Focal,
    /// Binary cross entropy on the per-class scores only.
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_rce: f64,
    pub lambda_e: f64,
    pub lambda_b: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Adds the negative-label term to both focal losses.
    pub rce_full_focal: bool,
    pub rce_loss: RceLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_rce: 1.0,
            lambda_e: 1.0,
            lambda_b: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            rce_full_focal: false,
            rce_loss: RceLoss::Focal,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rce", self.lambda_rce),
            ("lambda_e", self.lambda_e),
            ("lambda_b", self.lambda_b),
            ("focal_alpha", self.focal_alpha),
            ("focal_gamma", self.focal_gamma),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), Config, "{name} must be a finite nonnegative number, got {v}");
        }
        ensure!(self.focal_alpha <= 1.0, Config, "focal_alpha must be <= 1");
        Ok(())
    }
}

/// Mean of `−log(max(probs[r, target[r]], 1e-12))` over rows.
pub fn cross_entropy(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    let cols = tape.value(probs).cols();
    for &t in targets {
        ensure!(t < cols, Index, "target class {t} >= {cols}");
    }
    if targets.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let p = tape.pick(probs, targets)?;
    let p = tape.clamp(p, CE_FLOOR, f64::INFINITY)?;
    let lp = tape.log(p)?;
    let m = tape.mean(lp)?;
    tape.scale(m, -1.0)
}

fn label_tensor(tape: &Tape, scores: Var, labels: &Tensor) -> Result<()> {
    ensure!(
        tape.shape(scores) == labels.shape(),
        Dimension,
        "scores {:?} vs labels {:?}",
        tape.shape(scores),
        labels.shape()
    );
    ensure!(labels.data().iter().all(|y| *y == 0.0 || *y == 1.0), Domain, "labels must be 0 or 1");
    Ok(())
}

/// Focal loss over an `M × C` score matrix with 0/1 labels, normalized by
/// the number of rows `M`. The default form sums only over positive
/// labels, `−α (1−s)^γ log s`; `full` adds `−(1−α) s^γ log(1−s)` over the
/// negative labels.
pub fn focal_loss(tape: &mut Tape, scores: Var, labels: &Tensor, alpha: f64, gamma: f64, full: bool) -> Result<Var> {
    label_tensor(tape, scores, labels)?;
    let m = tape.value(scores).rows();
    if m == 0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let s = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let y = tape.constant(labels.clone())?;
    let log_s = tape.log(s)?;
    let one_minus = tape.one_minus(s)?;
    let modulator = tape.powf(one_minus, gamma)?;
    let pos = tape.mul(modulator, log_s)?;
    let pos = tape.mul(pos, y)?;
    let pos = tape.sum(pos)?;
    let mut loss = tape.scale(pos, -alpha / m as f64)?;
    if full {
        let log_neg = tape.log(one_minus)?;
        let modulator = tape.powf(s, gamma)?;
        let not_y = tape.one_minus(y)?;
        let neg = tape.mul(modulator, log_neg)?;
        let neg = tape.mul(neg, not_y)?;
        let neg = tape.sum(neg)?;
        let neg = tape.scale(neg, -(1.0 - alpha) / m as f64)?;
        loss = tape.add(loss, neg)?;
    }
    Ok(loss)
}

/// Focal loss on the per-class scores `s_m`; `labels[k]` is the
/// predicate class of proposal `k`, `None` for background (all-zero row).
pub fn focal_multi(tape: &mut Tape, s_m: Var, labels: &[Option<usize>], alpha: f64, gamma: f64, full: bool) -> Result<Var> {
    let y = one_hot(labels, tape.value(s_m).cols())?;
    focal_loss(tape, s_m, &y, alpha, gamma, full)
}

/// Focal loss on the fused score `s_b` (`M × 1`) against relatedness labels.
pub fn focal_binary(tape: &mut Tape, s_b: Var, related: &[bool], alpha: f64, gamma: f64, full: bool) -> Result<Var> {
    let y = Tensor::new(vec![related.len(), 1], related.iter().map(|&r| f64::from(u8::from(r))).collect())?;
    focal_loss(tape, s_b, &y, alpha, gamma, full)
}

/// `(1/M) Σ_k Σ_i −[y log p + (1−y) log(1−p)]`.
pub fn bce_relatedness(tape: &mut Tape, scores: Var, labels: &Tensor) -> Result<Var> {
    label_tensor(tape, scores, labels)?;
    let m = tape.value(scores).rows();
    if m == 0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let p = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let y = tape.constant(labels.clone())?;
    let log_p = tape.log(p)?;
    let q = tape.one_minus(p)?;
    let log_q = tape.log(q)?;
    let not_y = tape.one_minus(y)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both)?;
    tape.scale(total, -1.0 / m as f64)
}

/// `M × C` 0/1 matrix with a one in column `labels[k]` when present.
pub fn one_hot(labels: &[Option<usize>], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (k, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            ensure!(c < num_classes, Index, "label {c} >= {num_classes}");
            t.data_mut()[k * num_classes + c] = 1.0;
        }
    }
    Ok(t)
}

/// Confidence losses of one estimate.
#[derive(Clone, Copy, Debug)]
pub struct RceTerms {
    pub l_m: Var,
    pub l_b: Var,
}

/// `L_p + λ_rce Σ_stages (L_m + λ_b L_b) + λ_e L_e`.
pub fn total_loss(tape: &mut Tape, l_p: Var, l_e: Option<Var>, rce: &[RceTerms], cfg: &LossConfig) -> Result<Var> {
    let mut total = l_p;
    for t in rce {
        let lb = tape.scale(t.l_b, cfg.lambda_b)?;
        let stage = tape.add(t.l_m, lb)?;
        let stage = tape.scale(stage, cfg.lambda_rce)?;
        total = tape.add(total, stage)?;
    }
    if let Some(le) = l_e {
        let le = tape.scale(le, cfg.lambda_e)?;
        total = tape.add(total, le)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
