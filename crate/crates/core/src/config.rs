//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//! manifest = "data/synth.json"
//!
//! [model]
//! entity_dim = 64
//! stages = 3
//! iterations = 3
//! [model.gating]
//! mode = "confidence"
//!
//! [sampler]
//! repeat_threshold = 0.07
//! drop_gamma = 0.7
//!
//! [loss]
//! lambda_rce = 1.0
//!
//! [train]
//! steps = 2000
//! lr = 1e-3
//! ```
//!
//! Every table is optional and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bgnn::{BgnnConfig, GatingConfig};
use crate::error::{ensure, Error, Result};
use crate::eval::{EvalMode, DEFAULT_KS};
use crate::losses::LossConfig;
use crate::numeric::Precision;
use crate::predictor::DecodeMode;
use crate::proposals::SynthConfig;
use crate::sampling::SamplerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub entity_dim: usize,
    pub predicate_dim: usize,
    /// Layers in each of the representation networks.
    pub repr_depth: usize,
    /// `N_t`
    pub stages: usize,
    /// `N_i`
    pub iterations: usize,
    pub rce_hidden: usize,
    pub rce_per_iteration: bool,
    pub gating: GatingConfig,
    pub use_frequency_prior: bool,
    pub prior_epsilon: f64,
    /// Keep only this many ordered pairs per image, ranked by entity score.
    pub max_pairs: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            entity_dim: 64,
            predicate_dim: 64,
            repr_depth: 1,
            stages: 3,
            iterations: 3,
            rce_hidden: 64,
            rce_per_iteration: false,
            gating: GatingConfig::default(),
            use_frequency_prior: true,
            prior_epsilon: 1e-3,
            max_pairs: None,
        }
    }
}

impl ModelConfig {
    pub fn bgnn(&self) -> BgnnConfig {
        BgnnConfig {
            stages: self.stages,
            iterations: self.iterations,
            rce_hidden: self.rce_hidden,
            rce_per_iteration: self.rce_per_iteration,
            gating: self.gating.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.embed_dim > 0 && self.entity_dim > 0 && self.predicate_dim > 0, Config, "model dimensions must be positive");
        ensure!(self.repr_depth >= 1, Config, "repr_depth must be >= 1");
        ensure!(self.prior_epsilon > 0.0, Config, "prior_epsilon must be positive");
        ensure!(self.max_pairs != Some(0), Config, "max_pairs must be positive when set");
        self.bgnn().validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer steps.
    pub steps: usize,
    /// Images per optimizer step (gradient accumulation).
    pub accumulate: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Entity inputs during training: ground-truth labels (`predcls`) or
    /// detector labels (`sgcls`).
    pub mode: EvalMode,
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            accumulate: 1,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: 5.0,
            mode: EvalMode::SgCls,
            log_every: 50,
            checkpoint_every: 0,
            precision: Precision::Fp64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.accumulate >= 1, Config, "accumulate must be >= 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Config, "lr must be positive");
        ensure!((0.0..1.0).contains(&self.momentum), Config, "momentum must be in [0, 1)");
        ensure!(self.weight_decay >= 0.0 && self.grad_clip >= 0.0, Config, "weight_decay and grad_clip must be >= 0");
        ensure!(self.mode != EvalMode::SgGen, Config, "training runs on ground-truth boxes (predcls or sgcls)");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
    pub decode: DecodeMode,
    /// `[head_above, tail_below]`; defaults to the manifest's own cuts.
    pub group_cuts: Option<[u64; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: DEFAULT_KS.to_vec(), iou_threshold: 0.5, decode: DecodeMode::GraphConstraint, group_cuts: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampler.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        ensure!(!self.eval.ks.is_empty() && self.eval.ks.iter().all(|k| *k > 0), Config, "eval.ks must be positive");
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))
    }
}
