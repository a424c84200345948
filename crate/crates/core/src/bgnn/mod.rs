//! Confidence-aware bipartite message passing between entity and predicate
//! nodes, refined over several stages.

mod gate;
mod graph;
mod rce;
mod stage;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Var};

pub use gate::{gate, hard_topk_prune, linear_combo_gate, GatingConfig, GatingMode, RELNESS_FLOOR};
pub use graph::{BipartiteGraph, Topology};
pub use rce::{rce_forward, ConfidenceEstimate, RceParams};
pub use stage::{compute_gates, e2p_update, p2e_update, propagate, run_stage, Gates, LinearComboParams, StageDims, StageParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BgnnConfig {
    /// `N_t`
    pub stages: usize,
    /// `N_i`
    pub iterations: usize,
    pub rce_hidden: usize,
    pub rce_per_iteration: bool,
    pub gating: GatingConfig,
}

impl Default for BgnnConfig {
    fn default() -> Self {
        Self { stages: 3, iterations: 3, rce_hidden: 64, rce_per_iteration: false, gating: GatingConfig::default() }
    }
}

impl BgnnConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.stages >= 1, Config, "stages must be >= 1");
        ensure!(self.iterations >= 1, Config, "iterations must be >= 1");
        ensure!(self.rce_hidden >= 1, Config, "rce_hidden must be >= 1");
        self.gating.validate()
    }
}

#[derive(Clone, Debug)]
pub struct BgnnParams {
    pub stages: Vec<StageParams>,
}

impl BgnnParams {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &BgnnConfig, dims: StageDims, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let stages = (0..cfg.stages)
            .map(|t| StageParams::new(store, &format!("bgnn.stage{t}"), dims, &cfg.gating, rng))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(StageParams::params).collect()
    }
}

/// Output of the full network: refined features plus every confidence
/// estimate made along the way, in stage order.
#[derive(Clone, Debug)]
pub struct BgnnOutput {
    pub graph: BipartiteGraph,
    pub confidences: Vec<ConfidenceEstimate>,
}

/// Applies every stage in sequence; each re-estimates confidence on the
/// features refined by the previous one.
pub fn run_bgnn(
    tape: &mut Tape,
    store: &ParamStore,
    params: &BgnnParams,
    cfg: &BgnnConfig,
    graph: &BipartiteGraph,
    simplices: Var,
) -> Result<BgnnOutput> {
    ensure!(!params.stages.is_empty(), Contract, "no stages");
    let mut g = graph.clone();
    let mut confidences = Vec::new();
    for sp in &params.stages {
        let (next, conf) = run_stage(tape, store, sp, &cfg.gating, &g, simplices, cfg.iterations, cfg.rce_per_iteration)?;
        g = next;
        confidences.extend(conf);
    }
    Ok(BgnnOutput { graph: g, confidences })
}

#[cfg(test)]
mod tests;
