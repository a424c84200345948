//! Class distributions for refined nodes and scene graph decoding.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::RankedTriplet;
use crate::layers::{glorot, Linear};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

/// Initial pre-sigmoid fusion weight of refined vs. initial entity features.
pub const RHO_RAW_INIT: f64 = -5.0;

#[derive(Clone, Debug)]
pub struct PredictorParams {
    /// `D_r × (|C_p|+1)`, background last.
    pub w_rel: ParamId,
    /// `D_e × |C_e|`
    pub w_ent: ParamId,
    pub rho_raw: ParamId,
    /// Maps visual features to `D_e` when the widths differ.
    pub v_proj: Option<Linear>,
    pub num_entity_classes: usize,
    pub num_predicate_classes: usize,
}

impl PredictorParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        entity_dim: usize,
        predicate_dim: usize,
        visual_dim: usize,
        num_entity_classes: usize,
        num_predicate_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_rel = store.add("predictor.w_rel", glorot(predicate_dim, num_predicate_classes + 1, rng))?;
        let w_ent = store.add("predictor.w_ent", glorot(entity_dim, num_entity_classes, rng))?;
        let rho_raw = store.add("predictor.rho_raw", Tensor::scalar(RHO_RAW_INIT))?;
        let v_proj = if visual_dim != entity_dim {
            Some(Linear::new(store, "predictor.v_proj", visual_dim, entity_dim, false, rng)?)
        } else {
            None
        };
        Ok(Self { w_rel, w_ent, rho_raw, v_proj, num_entity_classes, num_predicate_classes })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.w_rel, self.w_ent, self.rho_raw];
        v.extend(self.v_proj.iter().flat_map(Linear::params));
        v
    }
}

/// Elementwise log of prior rows; every entry must be positive.
pub fn log_prior_rows(rows: &[&[f64]]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        ensure!(r.len() == width, Dimension, "prior rows of width {} and {width}", r.len());
        for &p in r.iter() {
            ensure!(p > 0.0, Domain, "non-positive prior entry {p}");
            data.push(p.ln());
        }
    }
    Tensor::new(vec![rows.len(), width], data)
}

/// `softmax(r̂ W_rel + log prior)` row by row; `log_prior` is `m × (|C_p|+1)`.
pub fn predict_predicates(tape: &mut Tape, store: &ParamStore, params: &PredictorParams, r_hat: Var, log_prior: Var) -> Result<Var> {
    let w = tape.param(store, params.w_rel)?;
    let logits = tape.matmul(r_hat, w)?;
    let z = tape.add(logits, log_prior)?;
    tape.softmax(z)
}

/// `softmax((ρ ê + (1−ρ) v') W_ent)` with `ρ = σ(rho_raw)`.
pub fn predict_entities(tape: &mut Tape, store: &ParamStore, params: &PredictorParams, e_hat: Var, visual: Var) -> Result<Var> {
    let v = match &params.v_proj {
        Some(l) => l.forward(tape, store, visual)?,
        None => visual,
    };
    ensure!(
        tape.shape(v) == tape.shape(e_hat),
        Dimension,
        "visual features {:?} vs refined entities {:?}",
        tape.shape(v),
        tape.shape(e_hat)
    );
    let raw = tape.param(store, params.rho_raw)?;
    let rho = tape.sigmoid(raw)?;
    let refined = tape.mul_scalar(e_hat, rho)?;
    let one_minus = tape.one_minus(rho)?;
    let initial = tape.mul_scalar(v, one_minus)?;
    let fused = tape.add(refined, initial)?;
    let w = tape.param(store, params.w_ent)?;
    let logits = tape.matmul(fused, w)?;
    tape.softmax(logits)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// At most one predicate per ordered pair.
    #[default]
    GraphConstraint,
    NoConstraint,
}

/// Decoded scene graph for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphPrediction {
    pub entity_probs: Vec<Vec<f64>>,
    pub entity_labels: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    /// One simplex over `|C_p|+1` per pair, background last.
    pub predicate_probs: Vec<Vec<f64>>,
    pub ranked_triplets: Vec<RankedTriplet>,
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn triplet_order(a: &RankedTriplet, b: &RankedTriplet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject.cmp(&b.subject))
        .then(a.object.cmp(&b.object))
        .then(a.predicate.cmp(&b.predicate))
}

/// Ranks triplets by `p_subj · p_pred · p_obj`, where the entity factors
/// are the probabilities of each entity's argmax class. The background
/// column (last) is never emitted, nor are zero-score triplets. Returns
/// at most `k` triplets when given.
pub fn decode_scene_graph(
    entity_probs: &[Vec<f64>],
    pairs: &[(usize, usize)],
    predicate_probs: &[Vec<f64>],
    mode: DecodeMode,
    k: Option<usize>,
) -> Result<Vec<RankedTriplet>> {
    ensure!(pairs.len() == predicate_probs.len(), Dimension, "{} pairs for {} predicate rows", pairs.len(), predicate_probs.len());
    let top: Vec<f64> = entity_probs.iter().map(|p| p.get(argmax(p)).copied().unwrap_or(0.0)).collect();
    let mut out = Vec::new();
    for (&(i, j), probs) in pairs.iter().zip(predicate_probs) {
        ensure!(i < top.len() && j < top.len(), Index, "pair ({i}, {j}) outside {} entities", top.len());
        ensure!(!probs.is_empty(), Dimension, "empty predicate distribution");
        let fg = &probs[..probs.len() - 1];
        let pair_score = top[i] * top[j];
        match mode {
            DecodeMode::GraphConstraint => {
                if fg.is_empty() {
                    continue;
                }
                let c = argmax(fg);
                out.push(RankedTriplet { subject: i, predicate: c, object: j, score: pair_score * fg[c] });
            }
            DecodeMode::NoConstraint => {
                out.extend(fg.iter().enumerate().map(|(c, p)| RankedTriplet { subject: i, predicate: c, object: j, score: pair_score * p }));
            }
        }
    }
    out.retain(|t| t.score > 0.0);
    out.sort_by(triplet_order);
    if let Some(k) = k {
        out.truncate(k);
    }
    Ok(out)
}

/// Reads a prediction dump (a JSON array of per-image records).
pub fn read_prediction_dump(text: &str) -> Result<Vec<crate::eval::ImagePrediction>> {
    serde_json::from_str(text).map_err(Error::from)
}
