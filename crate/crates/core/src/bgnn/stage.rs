//! One refinement stage: confidence estimation, gate computation and
//! `N_i` rounds of entity→predicate / predicate→entity propagation.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::layers::Linear;
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

use super::gate::{hard_topk_prune, GatingConfig, GatingMode, RELNESS_FLOOR};
use super::graph::{BipartiteGraph, Topology};
use super::rce::{rce_forward, ConfidenceEstimate, RceParams};

/// Weights of one stage, shared by all of its iterations.
#[derive(Clone, Debug)]
pub struct StageParams {
    /// `D_e → D_r`, entity message into a predicate.
    pub w_r: Linear,
    /// `D_r → D_e`, predicate message into an entity.
    pub w_e: Linear,
    /// `D_r + D_e → 1` subject / object affinity.
    pub w_s: Linear,
    pub w_o: Linear,
    pub rce: RceParams,
    pub log_alpha: ParamId,
    pub beta: ParamId,
    pub lc: Option<LinearComboParams>,
}

/// Extra weights of the linear-combination gate.
#[derive(Clone, Debug)]
pub struct LinearComboParams {
    pub w_x: Linear,
    pub w_u: Linear,
    pub w_p: ParamId,
    pub gamma_lc: ParamId,
    pub beta_lc: ParamId,
}

/// Dimensions shared by all stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageDims {
    pub entity_dim: usize,
    pub predicate_dim: usize,
    pub num_entity_classes: usize,
    pub num_predicate_classes: usize,
    pub rce_hidden: usize,
}

/// Message weights start small so that features stay O(1) through the
/// residual updates of every stage.
pub const MESSAGE_INIT_SCALE: f64 = 0.1;

impl StageParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: StageDims, gating: &GatingConfig, rng: &mut R) -> Result<Self> {
        gating.validate()?;
        let (de, dr) = (dims.entity_dim, dims.predicate_dim);
        let w_r = Linear::new(store, &format!("{name}.w_r"), de, dr, false, rng)?;
        let w_e = Linear::new(store, &format!("{name}.w_e"), dr, de, false, rng)?;
        for id in [w_r.weight, w_e.weight] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= MESSAGE_INIT_SCALE);
        }
        let w_s = Linear::new(store, &format!("{name}.w_s"), dr + de, 1, false, rng)?;
        let w_o = Linear::new(store, &format!("{name}.w_o"), dr + de, 1, false, rng)?;
        let rce = RceParams::new(
            store,
            &format!("{name}.rce"),
            dr,
            dims.num_entity_classes,
            dims.num_predicate_classes,
            dims.rce_hidden,
            rng,
        )?;
        let log_alpha = store.add(format!("{name}.gate.log_alpha"), Tensor::scalar(gating.alpha.ln()))?;
        let beta = store.add(format!("{name}.gate.beta"), Tensor::scalar(gating.beta))?;
        let lc = if gating.mode == GatingMode::LinearCombo {
            let hid = de.min(dr).max(1);
            Some(LinearComboParams {
                w_x: Linear::new(store, &format!("{name}.lc.w_x"), de, hid, false, rng)?,
                w_u: Linear::new(store, &format!("{name}.lc.w_u"), dr, hid, false, rng)?,
                w_p: store.add(format!("{name}.lc.w_p"), crate::layers::glorot(dims.num_predicate_classes, 1, rng))?,
                gamma_lc: store.add(format!("{name}.lc.gamma"), Tensor::scalar(gating.gamma_lc))?,
                beta_lc: store.add(format!("{name}.lc.beta"), Tensor::scalar(gating.beta_lc))?,
            })
        } else {
            None
        };
        Ok(Self { w_r, w_e, w_s, w_o, rce, log_alpha, beta, lc })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.w_r.params();
        v.extend(self.w_e.params());
        v.extend(self.w_s.params());
        v.extend(self.w_o.params());
        v.extend(self.rce.params());
        v.push(self.log_alpha);
        v.push(self.beta);
        if let Some(lc) = &self.lc {
            v.extend(lc.w_x.params());
            v.extend(lc.w_u.params());
            v.extend([lc.w_p, lc.gamma_lc, lc.beta_lc]);
        }
        v
    }
}

/// Per-edge gate values for one propagation round. `subj[k]` weights the
/// message from predicate `k` into its subject, `obj[k]` into its object;
/// both are `m × 1`. `keep`, when present, is a 0/1 column that freezes
/// pruned predicates during entity→predicate updates.
#[derive(Clone, Copy, Debug)]
pub struct Gates {
    pub subj: Var,
    pub obj: Var,
    pub keep: Option<Var>,
}

fn affinity(tape: &mut Tape, store: &ParamStore, w: &Linear, r: Var, e: Var) -> Result<Var> {
    let x = tape.concat(&[r, e], 1)?;
    let z = w.forward(tape, store, x)?;
    tape.sigmoid(z)
}

/// `r' = r + ReLU(d_s·W_r^T e_i + d_o·W_r^T e_j)` for every predicate.
pub fn e2p_update(tape: &mut Tape, store: &ParamStore, p: &StageParams, graph: &BipartiteGraph, keep: Option<Var>) -> Result<Var> {
    let t = &graph.topology;
    let es = tape.gather_rows(graph.entities, &t.subj)?;
    let eo = tape.gather_rows(graph.entities, &t.obj)?;
    let ds = affinity(tape, store, &p.w_s, graph.predicates, es)?;
    let d_o = affinity(tape, store, &p.w_o, graph.predicates, eo)?;
    let ms = p.w_r.forward(tape, store, es)?;
    let mo = p.w_r.forward(tape, store, eo)?;
    let ms = tape.mul_col(ms, ds)?;
    let mo = tape.mul_col(mo, d_o)?;
    let sum = tape.add(ms, mo)?;
    let mut upd = tape.relu(sum)?;
    if let Some(k) = keep {
        upd = tape.mul_col(upd, k)?;
    }
    tape.add(graph.predicates, upd)
}

/// `e' = e + ReLU(mean_{B_s} γ d_s W_e^T r + mean_{B_o} γ d_o W_e^T r)`.
/// Messages with zero gate are left out of the mean altogether, so a
/// blocked predicate is indistinguishable from an absent one.
pub fn p2e_update(
    tape: &mut Tape,
    store: &ParamStore,
    p: &StageParams,
    entities: Var,
    predicates: Var,
    topology: &Topology,
    gates: &Gates,
) -> Result<Var> {
    let n = topology.num_entities;
    if topology.num_predicates() == 0 {
        return Ok(entities);
    }
    let es = tape.gather_rows(entities, &topology.subj)?;
    let eo = tape.gather_rows(entities, &topology.obj)?;
    let ds = affinity(tape, store, &p.w_s, predicates, es)?;
    let d_o = affinity(tape, store, &p.w_o, predicates, eo)?;
    let ws = tape.mul(gates.subj, ds)?;
    let wo = tape.mul(gates.obj, d_o)?;
    let msg = p.w_e.forward(tape, store, predicates)?;
    let from_subj = tape.segment_mean(msg, ws, &topology.subj, n)?;
    let from_obj = tape.segment_mean(msg, wo, &topology.obj, n)?;
    let sum = tape.add(from_subj, from_obj)?;
    let upd = tape.relu(sum)?;
    tape.add(entities, upd)
}

fn column(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    let m = values.len();
    tape.constant(Tensor::new(vec![m, 1], values)?)
}

/// Derives the per-edge gates from a confidence estimate.
pub fn compute_gates(
    tape: &mut Tape,
    store: &ParamStore,
    p: &StageParams,
    gating: &GatingConfig,
    graph: &BipartiteGraph,
    conf: &ConfidenceEstimate,
) -> Result<Gates> {
    let m = graph.topology.num_predicates();
    match gating.mode {
        GatingMode::Confidence => {
            let la = tape.param(store, p.log_alpha)?;
            let b = tape.param(store, p.beta)?;
            let g = tape.gate(conf.s_b, la, b)?;
            Ok(Gates { subj: g, obj: g, keep: None })
        }
        GatingMode::None => {
            let one = column(tape, vec![1.0; m])?;
            Ok(Gates { subj: one, obj: one, keep: None })
        }
        GatingMode::HardTopk => {
            let keep = hard_topk_prune(tape.value(conf.s_b).data(), gating.top_n);
            let k = column(tape, keep.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
            Ok(Gates { subj: k, obj: k, keep: Some(k) })
        }
        GatingMode::LinearCombo => {
            let lc = p.lc.as_ref().ok_or_else(|| crate::Error::Config("linear_combo gating without its parameters".into()))?;
            let w_p = tape.param(store, lc.w_p)?;
            let rel_prob = tape.matmul(conf.s_m, w_p)?;
            let gamma = tape.param(store, lc.gamma_lc)?;
            let rel_prob = tape.mul_scalar(rel_prob, gamma)?;
            let floored = tape.clamp(conf.s_b, RELNESS_FLOOR, 1.0)?;
            let relness = tape.log(floored)?;
            let beta = tape.param(store, lc.beta_lc)?;
            let relness = tape.mul_scalar(relness, beta)?;
            let shared = tape.add(rel_prob, relness)?;
            let u = lc.w_u.forward(tape, store, graph.predicates)?;
            let mut edge = |idx: &[usize]| -> Result<Var> {
                let e = tape.gather_rows(graph.entities, idx)?;
                let x = lc.w_x.forward(tape, store, e)?;
                let prod = tape.mul(x, u)?;
                let d_feat = tape.sum_rows(prod)?;
                let z = tape.add(d_feat, shared)?;
                tape.sigmoid(z)
            };
            let subj = edge(&graph.topology.subj)?;
            let obj = edge(&graph.topology.obj)?;
            Ok(Gates { subj, obj, keep: None })
        }
    }
}

/// One propagation round in Jacobi order: predicates are updated from the
/// round-entry features, then entities from the fresh predicates.
pub fn propagate(tape: &mut Tape, store: &ParamStore, p: &StageParams, graph: &BipartiteGraph, gates: &Gates) -> Result<BipartiteGraph> {
    let predicates = e2p_update(tape, store, p, graph, gates.keep)?;
    let entities = p2e_update(tape, store, p, graph.entities, predicates, &graph.topology, gates)?;
    Ok(BipartiteGraph { entities, predicates, topology: graph.topology.clone() })
}

/// Runs one stage. Confidence is estimated at stage entry (or before every
/// round when `rce_per_iteration` is set); all estimates are returned.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    tape: &mut Tape,
    store: &ParamStore,
    p: &StageParams,
    gating: &GatingConfig,
    graph: &BipartiteGraph,
    simplices: Var,
    iterations: usize,
    rce_per_iteration: bool,
) -> Result<(BipartiteGraph, Vec<ConfidenceEstimate>)> {
    ensure!(iterations >= 1, Contract, "a stage needs at least one iteration");
    let t = &graph.topology;
    let mut g = graph.clone();
    let mut estimates = Vec::new();
    if t.num_predicates() == 0 {
        return Ok((g, estimates));
    }
    let mut conf = rce_forward(tape, store, &p.rce, g.predicates, simplices, &t.subj, &t.obj)?;
    estimates.push(conf);
    for it in 0..iterations {
        if rce_per_iteration && it > 0 {
            conf = rce_forward(tape, store, &p.rce, g.predicates, simplices, &t.subj, &t.obj)?;
            estimates.push(conf);
        }
        // linear-combo gates read node features, so they follow each round
        let gates = compute_gates(tape, store, p, gating, &g, &conf)?;
        g = propagate(tape, store, p, &g, &gates)?;
    }
    Ok((g, estimates))
}
