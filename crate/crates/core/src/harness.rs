//! Finite-difference check of the full model on a small toy image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::EvalMode;
use crate::losses::LossConfig;
use crate::model::{ImageInput, Model, Targets};
use crate::numeric::{finite_diff_check_piecewise, ParamStore, Tape};
use crate::proposals::{BBox, EntityProposal, FrequencyPrior, ImageRecord, Split};

pub const TOY_ENTITIES: usize = 4;
const TOY_ENTITY_CLASSES: usize = 3;
const TOY_PREDICATE_CLASSES: usize = 4;
const TOY_VISUAL_DIM: usize = 6;
pub const GRADCHECK_EPSILON: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    /// Corrupt the analytic gradients before comparing (negative control).
    pub inject_bug: bool,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamResult {
    pub name: String,
    pub max_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SkippedElement {
    pub name: String,
    pub index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOutcome {
    pub passed: bool,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub num_params: usize,
    pub num_elements: usize,
    pub params: Vec<ParamResult>,
    pub offenders: Vec<String>,
    /// Elements whose perturbation crossed a kink.
    pub skipped: Vec<SkippedElement>,
}

/// Four entities with random boxes, features and class simplices, and a
/// handful of annotated triplets.
pub fn toy_record(seed: u64) -> ImageRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<usize> = (0..TOY_ENTITIES).map(|_| rng.gen_range(0..TOY_ENTITY_CLASSES)).collect();
    let entities = classes
        .iter()
        .map(|&c| {
            let (x, y) = (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0));
            let (w, h) = (rng.gen_range(10.0..40.0), rng.gen_range(10.0..40.0));
            let mut simplex: Vec<f64> = (0..TOY_ENTITY_CLASSES).map(|_| rng.gen_range(0.1..1.0)).collect();
            simplex[c] += 1.0;
            let s: f64 = simplex.iter().sum();
            simplex.iter_mut().for_each(|v| *v /= s);
            let detected = crate::predictor::argmax(&simplex);
            EntityProposal {
                bbox: BBox::new(x, y, x + w, y + h),
                detected_class: detected,
                class_simplex: simplex,
                feature: (0..TOY_VISUAL_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let gt_triplets = vec![[0, rng.gen_range(0..TOY_PREDICATE_CLASSES), 1], [2, rng.gen_range(0..TOY_PREDICATE_CLASSES), 3], [
        1,
        rng.gen_range(0..TOY_PREDICATE_CLASSES),
        2,
    ]];
    ImageRecord {
        image_id: seed,
        width: 100.0,
        height: 100.0,
        split: Split::Train,
        entities,
        gt_entity_classes: classes,
        gt_triplets,
        union_features: Vec::new(),
        detections: None,
    }
}

/// Toy model: the configured stages, iterations and gating, at reduced
/// widths so every element can be perturbed quickly.
pub fn toy_model(cfg: &RunConfig, seed: u64) -> Result<Model> {
    let mut mc = cfg.model.clone();
    mc.embed_dim = 4;
    mc.entity_dim = 6;
    mc.predicate_dim = 5;
    mc.rce_hidden = 6;
    mc.max_pairs = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7011);
    let slots = TOY_PREDICATE_CLASSES + 1;
    let table: Vec<f64> = (0..TOY_ENTITY_CLASSES * TOY_ENTITY_CLASSES)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..slots).map(|_| rng.gen_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(move |v| v / s)
        })
        .collect();
    let prior = FrequencyPrior::from_table(TOY_ENTITY_CLASSES, slots, table)?;
    Model::new(&mc, TOY_ENTITY_CLASSES, TOY_PREDICATE_CLASSES, TOY_VISUAL_DIM, &prior, seed)
}

/// Full-model gradient check on the toy instance for `cfg.seed`. Elements
/// whose perturbation crosses a ReLU, clamp or gate kink are skipped and
/// reported.
pub fn model_gradcheck(cfg: &RunConfig, opts: &GradcheckOptions) -> Result<GradcheckOutcome> {
    let model = toy_model(cfg, cfg.seed)?;
    check_model(model, &toy_record(cfg.seed), &cfg.loss, opts)
}

pub fn check_model(mut model: Model, record: &ImageRecord, loss: &LossConfig, opts: &GradcheckOptions) -> Result<GradcheckOutcome> {
    let input = ImageInput::build(record, EvalMode::SgCls, model.num_entity_classes, None)?;
    let targets = Targets::build(record, &input, None)?;
    let ids = model.trainable();
    let mut store = std::mem::take(&mut model.store);
    store.zero_grads();
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &store, &input)?;
    let (l, _) = model.loss(&mut tape, &fwd, &targets, loss)?;
    tape.backward(l, &mut store)?;
    if opts.inject_bug {
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= 1.01);
        }
    }
    let num_elements = ids.iter().map(|&id| store.value(id).len()).sum();
    let eps = opts.epsilon.unwrap_or(GRADCHECK_EPSILON);
    let eval = |s: &ParamStore| -> Result<(f64, Vec<u8>)> {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, s, &input)?;
        let (l, _) = model.loss(&mut tape, &fwd, &targets, loss)?;
        Ok((tape.item(l)?, tape.regions()))
    };
    let (report, skipped) = finite_diff_check_piecewise(eval, &mut store, &ids, eps)?;
    let tol = GRADCHECK_TOLERANCE;
    Ok(GradcheckOutcome {
        passed: report.passes(tol),
        tolerance: tol,
        max_rel_err: report.max_rel_err(),
        num_params: report.params.len(),
        num_elements,
        offenders: report.offenders(tol).map(|p| p.name.clone()).collect(),
        params: report
            .params
            .iter()
            .map(|p| ParamResult { name: p.name.clone(), max_rel_err: p.max_rel_err, analytic: p.analytic, numeric: p.numeric })
            .collect(),
        skipped: skipped.into_iter().map(|e| SkippedElement { name: e.name, index: e.index }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes() {
        let out = model_gradcheck(&RunConfig::default(), &GradcheckOptions::default()).unwrap();
        let worst: Vec<_> = out.params.iter().filter(|p| p.max_rel_err >= out.tolerance).collect();
        assert!(out.passed, "{worst:?}");
        for name in ["log_alpha", "gate.beta", "rho_raw", "w_b"] {
            assert!(out.params.iter().any(|p| p.name.contains(name)), "{name} not checked");
        }
    }

    #[test]
    fn injected_bug_fails() {
        let out = model_gradcheck(&RunConfig::default(), &GradcheckOptions { inject_bug: true, ..Default::default() }).unwrap();
        assert!(!out.passed);
        assert!(!out.offenders.is_empty());
    }

    #[test]
    fn gate_input_on_kink_is_skipped() {
        let cfg = RunConfig::default();
        let mut model = toy_model(&cfg, 3).unwrap();
        let record = toy_record(3);
        let input = ImageInput::build(&record, EvalMode::SgCls, model.num_entity_classes, None).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &model.store, &input).unwrap();
        let x = tape.value(fwd.confidences[0].s_b).data()[0];
        let beta = model.bgnn.stages[0].beta;
        model.store.value_mut(beta).data_mut()[0] = x;
        let out = check_model(model, &record, &cfg.loss, &GradcheckOptions::default()).unwrap();
        assert!(out.skipped.iter().any(|e| e.name == "bgnn.stage0.gate.beta"), "{:?}", out.skipped);
        assert!(out.passed);
    }
}
