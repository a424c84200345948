use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{gate_value, sigmoid};

/// How predicate-to-entity messages are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// Piecewise-linear gate on the fused relationship confidence.
    #[default]
    Confidence,
    /// Per-edge sigmoid of a feature affinity, the relatedness scores and
    /// the log confidence.
    LinearCombo,
    /// Keep the `top_n` most confident predicates at weight 1, drop the rest.
    HardTopk,
    /// Every message at weight 1 (plain bipartite message passing).
    None,
}

/// Gate parameters at construction time. `alpha` is stored as its log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingConfig {
    pub mode: GatingMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_lc: f64,
    pub beta_lc: f64,
    pub top_n: usize,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self { mode: GatingMode::Confidence, alpha: 2.2, beta: 0.025, gamma_lc: 1.0, beta_lc: 1.0, top_n: 16 }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0 && self.alpha.is_finite(), Config, "gate alpha must be positive, got {}", self.alpha);
        ensure!(self.beta.is_finite(), Config, "gate beta must be finite");
        Ok(())
    }
}

/// `T(x)` for one confidence value.
pub fn gate(s_b: f64, alpha: f64, beta: f64) -> f64 {
    gate_value(s_b, alpha, beta)
}

/// Keep-mask of the `top_n` highest scores; ties go to the lower index.
pub fn hard_topk_prune(scores: &[f64], top_n: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = vec![false; scores.len()];
    for &k in order.iter().take(top_n) {
        keep[k] = true;
    }
    keep
}

/// Floor applied to relatedness scores before the log.
pub const RELNESS_FLOOR: f64 = 1e-6;

/// Scalar form of the linear-combination gate:
/// `σ(d_feat + gamma_lc·d_rel_prob + beta_lc·log(s_k))`.
pub fn linear_combo_gate(d_feat: f64, d_rel_prob: f64, s_k: f64, gamma_lc: f64, beta_lc: f64) -> Result<f64> {
    ensure!(s_k > 0.0 && s_k <= 1.0, Domain, "relatedness score {s_k} outside (0, 1]");
    let s_relness = s_k.max(RELNESS_FLOOR).ln();
    Ok(sigmoid(d_feat + gamma_lc * d_rel_prob + beta_lc * s_relness))
}
