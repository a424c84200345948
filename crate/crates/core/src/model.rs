//! The full scene graph model: proposal representations, the bipartite
//! network and the predictor, plus per-image inputs, losses and decoding.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bgnn::{run_bgnn, BgnnParams, BipartiteGraph, ConfidenceEstimate, StageDims, Topology};
use crate::config::ModelConfig;
use crate::error::{ensure, Error, Result};
use crate::eval::{entity_score_product_baseline, EvalMode, GroundTruth, ImagePrediction, PairConfidence};
use crate::losses::{bce_relatedness, cross_entropy, focal_binary, focal_loss, total_loss, LossConfig, RceLoss, RceTerms};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::predictor::{argmax, decode_scene_graph, predict_entities, predict_predicates, DecodeMode, PredictorParams};
use crate::proposals::{
    build_frequency_prior, entity_representation, geometry_encode, pair_entities, predicate_representation, BBox, DatasetManifest,
    FrequencyPrior, ImageRecord, ProposalSet, RepresentationParams, GEOMETRY_DIM,
};

/// Name of the non-trainable prior buffer inside the parameter store.
pub const PRIOR_BUFFER: &str = "buffer.frequency_prior";

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub repr: RepresentationParams,
    pub bgnn: BgnnParams,
    pub predictor: PredictorParams,
    pub prior: ParamId,
    pub num_entity_classes: usize,
    pub num_predicate_classes: usize,
    pub visual_dim: usize,
}

impl Model {
    pub fn new(
        config: &ModelConfig,
        num_entity_classes: usize,
        num_predicate_classes: usize,
        visual_dim: usize,
        prior: &FrequencyPrior,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        ensure!(num_entity_classes > 0 && num_predicate_classes > 0, Config, "class vocabularies must be nonempty");
        ensure!(
            prior.num_entity_classes() == num_entity_classes && prior.num_slots() == num_predicate_classes + 1,
            Dimension,
            "prior shape does not match the class vocabularies"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let repr = RepresentationParams::new(
            &mut store,
            num_entity_classes,
            visual_dim,
            config.embed_dim,
            config.entity_dim,
            config.predicate_dim,
            config.repr_depth,
            &mut rng,
        )?;
        let dims = StageDims {
            entity_dim: config.entity_dim,
            predicate_dim: config.predicate_dim,
            num_entity_classes,
            num_predicate_classes,
            rce_hidden: config.rce_hidden,
        };
        let bgnn = BgnnParams::new(&mut store, &config.bgnn(), dims, &mut rng)?;
        let predictor = PredictorParams::new(
            &mut store,
            config.entity_dim,
            config.predicate_dim,
            visual_dim,
            num_entity_classes,
            num_predicate_classes,
            &mut rng,
        )?;
        let table = Tensor::new(vec![num_entity_classes, num_entity_classes, num_predicate_classes + 1], prior.table().to_vec())?;
        let prior = store.add(PRIOR_BUFFER, table)?;
        Ok(Self { config: config.clone(), store, repr, bgnn, predictor, prior, num_entity_classes, num_predicate_classes, visual_dim })
    }

    /// Builds a model whose prior is estimated from the training split.
    pub fn from_manifest(config: &ModelConfig, manifest: &DatasetManifest, seed: u64) -> Result<Self> {
        let visual_dim = manifest.feature_dim().ok_or_else(|| Error::Contract("manifest has no entities".into()))?;
        let prior = if config.use_frequency_prior {
            build_frequency_prior(manifest, config.prior_epsilon)?
        } else {
            FrequencyPrior::uniform(manifest.num_entity_classes(), manifest.num_predicate_classes())
        };
        Self::new(config, manifest.num_entity_classes(), manifest.num_predicate_classes(), visual_dim, &prior, seed)
    }

    /// Parameters updated by the optimizer (everything but buffers).
    pub fn trainable(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| id != self.prior).collect()
    }

    fn prior_slice<'a>(&self, store: &'a ParamStore, subj: usize, obj: usize) -> &'a [f64] {
        let slots = self.num_predicate_classes + 1;
        let start = (subj * self.num_entity_classes + obj) * slots;
        &store.value(self.prior).data()[start..start + slots]
    }
}

/// Everything the network reads for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInput {
    pub image_id: u64,
    pub mode: EvalMode,
    /// `n × D_v`
    pub visual: Tensor,
    /// `n × 8`
    pub geometry: Tensor,
    /// Class fed to the embedding table and the prior, per entity.
    pub classes: Vec<usize>,
    /// `n × |C_e|`
    pub simplices: Tensor,
    pub boxes: Vec<BBox>,
    pub pairs: Vec<(usize, usize)>,
    /// `m × D_v`
    pub unions: Tensor,
}

impl ImageInput {
    pub fn num_entities(&self) -> usize {
        self.classes.len()
    }

    /// Entities as given by the mode: ground-truth boxes (with ground-truth
    /// labels for PredCls, detector labels for SGCls) or raw detections
    /// for SGGen.
    pub fn build(record: &ImageRecord, mode: EvalMode, num_entity_classes: usize, max_pairs: Option<usize>) -> Result<Self> {
        let owned;
        let set: &ProposalSet = match mode {
            EvalMode::PredCls | EvalMode::SgCls => {
                owned = record.gt_proposals();
                &owned
            }
            EvalMode::SgGen => record
                .detections
                .as_ref()
                .ok_or_else(|| Error::Config(format!("image {} has no detections for sggen", record.image_id)))?,
        };
        let n = set.entities.len();
        let classes: Vec<usize> = match mode {
            EvalMode::PredCls => record.gt_entity_classes.clone(),
            _ => set.entities.iter().map(|e| e.detected_class).collect(),
        };
        ensure!(classes.len() == n, Dimension, "image {}: {} labels for {n} entities", record.image_id, classes.len());
        let mut simplex_rows = Vec::with_capacity(n);
        let mut geometry = Vec::with_capacity(n * GEOMETRY_DIM);
        for (e, &c) in set.entities.iter().zip(&classes) {
            ensure!(c < num_entity_classes, Index, "entity class {c} >= {num_entity_classes}");
            if mode == EvalMode::PredCls {
                let mut row = vec![0.0; num_entity_classes];
                row[c] = 1.0;
                simplex_rows.push(row);
            } else {
                ensure!(e.class_simplex.len() == num_entity_classes, Dimension, "class simplex width {}", e.class_simplex.len());
                simplex_rows.push(e.class_simplex.clone());
            }
            geometry.extend_from_slice(&geometry_encode(&e.bbox, record.width, record.height)?);
        }
        let visual_rows: Vec<Vec<f64>> = set.entities.iter().map(|e| e.feature.clone()).collect();
        let scores: Vec<f64> = simplex_rows.iter().map(|r| r[argmax(r)]).collect();
        let pairs = pair_entities(n, max_pairs, &scores);
        let by_pair: HashMap<[usize; 2], &Vec<f64>> = set.union_features.iter().map(|u| (u.pair, &u.feature)).collect();
        let dv = visual_rows.first().map_or(0, Vec::len);
        let mut unions = Vec::with_capacity(pairs.len() * dv);
        for &(i, j) in &pairs {
            match by_pair.get(&[i, j]) {
                Some(f) => {
                    ensure!(f.len() == dv, Dimension, "union feature of width {} vs {dv}", f.len());
                    unions.extend_from_slice(f);
                }
                None => unions.extend(visual_rows[i].iter().zip(&visual_rows[j]).map(|(a, b)| 0.5 * (a + b))),
            }
        }
        Ok(Self {
            image_id: record.image_id,
            mode,
            visual: Tensor::new(vec![n, dv], visual_rows.concat())?,
            geometry: Tensor::new(vec![n, GEOMETRY_DIM], geometry)?,
            classes,
            simplices: Tensor::new(vec![n, num_entity_classes], simplex_rows.concat())?,
            boxes: set.entities.iter().map(|e| e.bbox).collect(),
            unions: Tensor::new(vec![pairs.len(), dv], unions)?,
            pairs,
        })
    }
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub entity_probs: Var,
    pub predicate_probs: Var,
    pub confidences: Vec<ConfidenceEstimate>,
    pub graph: BipartiteGraph,
}

impl Model {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &ImageInput) -> Result<Forward> {
        ensure!(!input.pairs.is_empty(), Contract, "image {} has no entity pairs", input.image_id);
        ensure!(
            input.visual.cols() == self.visual_dim,
            Dimension,
            "visual features of width {} for a model built on {}",
            input.visual.cols(),
            self.visual_dim
        );
        let topology = Topology::new(input.num_entities(), &input.pairs)?;
        let visual = tape.constant(input.visual.clone())?;
        let geometry = tape.constant(input.geometry.clone())?;
        let entities = entity_representation(tape, store, &self.repr, visual, geometry, &input.classes)?;
        let unions = tape.constant(input.unions.clone())?;
        let predicates = predicate_representation(tape, store, &self.repr, entities, unions, &topology.subj, &topology.obj)?;
        let simplices = tape.constant(input.simplices.clone())?;
        let graph = BipartiteGraph { entities, predicates, topology };
        let out = run_bgnn(tape, store, &self.bgnn, &self.config.bgnn(), &graph, simplices)?;
        let entity_probs = predict_entities(tape, store, &self.predictor, out.graph.entities, visual)?;
        let slices: Vec<&[f64]> = input.pairs.iter().map(|&(i, j)| self.prior_slice(store, input.classes[i], input.classes[j])).collect();
        let log_prior = tape.constant(crate::predictor::log_prior_rows(&slices)?)?;
        let predicate_probs = predict_predicates(tape, store, &self.predictor, out.graph.predicates, log_prior)?;
        Ok(Forward { entity_probs, predicate_probs, confidences: out.confidences, graph: out.graph })
    }
}

/// Supervision for one image visit.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// Predicate classes annotated on each pair, in annotation order.
    pub pair_classes: Vec<Vec<usize>>,
    /// Pairs left out of every predicate-level loss, because all of their
    /// annotated instances were dropped by the sampler.
    pub include: Vec<bool>,
    pub entity_classes: Vec<usize>,
}

impl Targets {
    /// Labels for GT-aligned inputs; `keep[t]` marks which annotated
    /// triplets are supervised in this visit (all when `None`).
    pub fn build(record: &ImageRecord, input: &ImageInput, keep: Option<&[bool]>) -> Result<Self> {
        ensure!(input.mode != EvalMode::SgGen, Contract, "training targets need ground-truth-aligned entities");
        let index: HashMap<(usize, usize), usize> = input.pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let m = input.pairs.len();
        let mut pair_classes = vec![Vec::new(); m];
        let mut annotated = vec![false; m];
        for (t, trip) in record.gt_triplets.iter().enumerate() {
            let Some(&k) = index.get(&(trip[0], trip[2])) else { continue };
            annotated[k] = true;
            if keep.map_or(true, |kp| kp[t]) && !pair_classes[k].contains(&trip[1]) {
                pair_classes[k].push(trip[1]);
            }
        }
        let include = (0..m).map(|k| !annotated[k] || !pair_classes[k].is_empty()).collect();
        Ok(Self { pair_classes, include, entity_classes: record.gt_entity_classes.clone() })
    }
}

/// Scalar values of the loss terms, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_p: f64,
    pub l_e: f64,
    pub l_rce: f64,
}

impl Model {
    pub fn loss(&self, tape: &mut Tape, fwd: &Forward, targets: &Targets, cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
        let bg = self.num_predicate_classes;
        let rows: Vec<usize> = (0..targets.include.len()).filter(|&k| targets.include[k]).collect();
        let labels: Vec<usize> = rows.iter().map(|&k| targets.pair_classes[k].first().copied().unwrap_or(bg)).collect();
        let probs = tape.gather_rows(fwd.predicate_probs, &rows)?;
        let l_p = cross_entropy(tape, probs, &labels)?;
        let l_e = cross_entropy(tape, fwd.entity_probs, &targets.entity_classes)?;
        let mut multi = Tensor::zeros(&[rows.len(), bg]);
        for (r, &k) in rows.iter().enumerate() {
            for &c in &targets.pair_classes[k] {
                multi.data_mut()[r * bg + c] = 1.0;
            }
        }
        let related: Vec<bool> = rows.iter().map(|&k| !targets.pair_classes[k].is_empty()).collect();
        let related_t = Tensor::new(vec![rows.len(), 1], related.iter().map(|&r| f64::from(u8::from(r))).collect())?;
        let mut terms = Vec::with_capacity(fwd.confidences.len());
        let mut rce_value = 0.0;
        for c in &fwd.confidences {
            let s_m = tape.gather_rows(c.s_m, &rows)?;
            let s_b = tape.gather_rows(c.s_b, &rows)?;
            let (l_m, l_b) = match cfg.rce_loss {
                RceLoss::Focal => (
                    focal_loss(tape, s_m, &multi, cfg.focal_alpha, cfg.focal_gamma, cfg.rce_full_focal)?,
                    focal_binary(tape, s_b, &related, cfg.focal_alpha, cfg.focal_gamma, cfg.rce_full_focal)?,
                ),
                RceLoss::Bce => (bce_relatedness(tape, s_m, &multi)?, bce_relatedness(tape, s_b, &related_t)?),
            };
            rce_value += tape.item(l_m)? + cfg.lambda_b * tape.item(l_b)?;
            terms.push(RceTerms { l_m, l_b });
        }
        let total = total_loss(tape, l_p, Some(l_e), &terms, cfg)?;
        let breakdown = LossBreakdown { total: tape.item(total)?, l_p: tape.item(l_p)?, l_e: tape.item(l_e)?, l_rce: rce_value };
        Ok((total, breakdown))
    }

    /// Runs the model and decodes a ranked scene graph. `top_k` bounds the
    /// number of emitted triplets.
    pub fn predict(&self, input: &ImageInput, decode: DecodeMode, top_k: Option<usize>) -> Result<ImagePrediction> {
        if input.pairs.is_empty() {
            return Ok(ImagePrediction {
                image_id: input.image_id,
                triplets: Vec::new(),
                entity_labels: input.classes.clone(),
                entity_boxes: input.boxes.clone(),
                pair_confidence: Vec::new(),
            });
        }
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &self.store, input)?;
        let to_rows = |t: &Tensor| -> Vec<Vec<f64>> { (0..t.rows()).map(|r| t.row(r).to_vec()).collect() };
        let entity_probs = match input.mode {
            EvalMode::PredCls => to_rows(&input.simplices),
            _ => to_rows(tape.value(fwd.entity_probs)),
        };
        let entity_labels = match input.mode {
            EvalMode::PredCls => input.classes.clone(),
            _ => entity_probs.iter().map(|p| argmax(p)).collect(),
        };
        let predicate_probs = to_rows(tape.value(fwd.predicate_probs));
        let triplets = decode_scene_graph(&entity_probs, &input.pairs, &predicate_probs, decode, top_k)?;
        let last = fwd.confidences.last().map(|c| tape.value(c.s_b).data().to_vec());
        let pair_confidence = input
            .pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| PairConfidence {
                pair: [i, j],
                rce: last.as_ref().map_or(0.0, |s| s[k]),
                baseline: entity_score_product_baseline(&entity_probs[i], &entity_probs[j]),
            })
            .collect();
        Ok(ImagePrediction { image_id: input.image_id, triplets, entity_labels, entity_boxes: input.boxes.clone(), pair_confidence })
    }
}

/// Ground truth of one manifest image in evaluation form.
pub fn ground_truth(record: &ImageRecord) -> GroundTruth {
    GroundTruth { triplets: record.gt_triplets.clone(), entity_classes: record.gt_entity_classes.clone(), boxes: record.gt_boxes() }
}
