//! Seed-averaged ablations on the synthetic long-tail set: gating against
//! plain message passing, bi-level sampling against none, and the RCE
//! ranking quality against the entity-score-product baseline.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::bgnn::GatingMode;
use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::{EvalMode, Group, MetricsReport};
use crate::proposals::{generate_synthetic_dataset, Split};
use crate::train::{evaluate, train};

/// Training steps per arm.
pub const ABLATION_STEPS: usize = 10_000;
pub const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const K: usize = 100;

/// Shared starting point of every arm: a 1200-image synthetic set with half
/// of it held out, up to four spurious detections per image, SGCls training
/// with the two-sided RCE focal loss.
pub fn base_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..Default::default() };
    cfg.synth.seed = seed;
    cfg.synth.n_images = 1200;
    cfg.synth.test_fraction = 0.5;
    cfg.synth.spurious_detection_prob = 0.5;
    cfg.synth.max_spurious_detections = 4;
    cfg.model.embed_dim = 16;
    cfg.model.entity_dim = 32;
    cfg.model.predicate_dim = 32;
    cfg.model.rce_hidden = 32;
    cfg.loss.rce_full_focal = true;
    cfg.train.mode = EvalMode::SgCls;
    cfg.train.steps = ABLATION_STEPS;
    cfg.train.log_every = 0;
    cfg
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub mean_recall: f64,
    pub tail_mean_recall: f64,
    pub auc_rce: Option<f64>,
    pub auc_baseline: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
    pub train_seconds: f64,
}

impl AblationReport {
    fn values(&self, arm: &str, f: impl Fn(&ArmResult) -> Option<f64>) -> Vec<f64> {
        self.arms.iter().filter(|a| a.arm == arm).filter_map(f).collect()
    }

    /// Seed mean of tail-group mR@100 for `arm`.
    pub fn tail(&self, arm: &str) -> f64 {
        mean(&self.values(arm, |a| Some(a.tail_mean_recall)))
    }

    pub fn auc_rce(&self, arm: &str) -> f64 {
        mean(&self.values(arm, |a| a.auc_rce))
    }

    pub fn auc_baseline(&self, arm: &str) -> f64 {
        mean(&self.values(arm, |a| a.auc_baseline))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub const ARM_PLAIN: &str = "plain";
pub const ARM_GATED: &str = "gated";
pub const ARM_BLS: &str = "bls";
pub const ARM_NO_RESAMPLING: &str = "no_resampling";

/// The four arms for one seed. `plain` and `gated` use a single stage (no
/// multi-stage refinement) and differ only in the gate; `bls` and
/// `no_resampling` are the full model and differ only in the sampler.
pub fn arms(seed: u64) -> Vec<(&'static str, RunConfig)> {
    let base = base_config(seed);
    let single = |mode: GatingMode| {
        let mut c = base.clone();
        c.model.stages = 1;
        c.model.gating.mode = mode;
        c
    };
    let mut no_rs = base.clone();
    no_rs.sampler.enabled = false;
    vec![(ARM_PLAIN, single(GatingMode::None)), (ARM_GATED, single(GatingMode::Confidence)), (ARM_BLS, base), (ARM_NO_RESAMPLING, no_rs)]
}

fn score(report: &MetricsReport) -> (f64, f64) {
    (report.mean_recall_at(K).unwrap_or(f64::NAN), report.group_recall_at(Group::Tail, K).unwrap_or(f64::NAN))
}

/// Trains every arm for every seed and evaluates on the held-out SGGen
/// proposals. `progress` is called after each arm.
pub fn run_ablation(seeds: &[u64], threads: usize, mut progress: impl FnMut(&ArmResult)) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    let mut spent = Duration::ZERO;
    for &seed in seeds {
        let manifest = generate_synthetic_dataset(&base_config(seed).synth)?;
        for (name, cfg) in arms(seed) {
            let started = Instant::now();
            let outcome = train(&cfg, &manifest, |_, _| Ok(()))?;
            spent += started.elapsed();
            let (metrics, _) = evaluate(&outcome.model, &manifest, Split::Test, EvalMode::SgGen, &cfg.eval, threads)?;
            let (mean_recall, tail_mean_recall) = score(&metrics);
            let arm = ArmResult {
                arm: name.to_string(),
                seed,
                mean_recall,
                tail_mean_recall,
                auc_rce: metrics.auc_rce,
                auc_baseline: metrics.auc_baseline,
            };
            progress(&arm);
            report.arms.push(arm);
        }
    }
    report.train_seconds = spent.as_secs_f64();
    Ok(report)
}
