//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bgnn::bgnn::{run_bgnn, BgnnConfig, BgnnParams, BipartiteGraph, StageDims, Topology};
use bgnn::config::RunConfig;
use bgnn::eval::{EvalMode, GroundTruth, ImagePrediction, RankedTriplet};
use bgnn::layers::glorot;
use bgnn::numeric::{ParamStore, Tape, Tensor};
use bgnn::proposals::{BBox, SynthConfig};

/// Piecewise definition of the gate, written out case by case.
pub fn gate_oracle(x: f64, alpha: f64, beta: f64) -> f64 {
    if x <= beta {
        0.0
    } else if x < 1.0 / alpha + beta {
        alpha * x - alpha * beta
    } else {
        1.0
    }
}

fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1).max(0.0) * (b.y2 - b.y1).max(0.0)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Localization quality of prediction `t` against GT `g`, `None` when the
/// two cannot match.
fn fit(pred: &ImagePrediction, gt: &GroundTruth, t: &RankedTriplet, g: &[usize; 3], mode: EvalMode, thr: f64) -> Option<f64> {
    if t.predicate != g[1] {
        return None;
    }
    if mode != EvalMode::PredCls
        && (pred.entity_labels[t.subject] != gt.entity_classes[g[0]] || pred.entity_labels[t.object] != gt.entity_classes[g[2]])
    {
        return None;
    }
    match mode {
        EvalMode::PredCls | EvalMode::SgCls => (t.subject == g[0] && t.object == g[2]).then_some(1.0),
        EvalMode::SgGen => {
            let s = iou_oracle(&pred.entity_boxes[t.subject], &gt.boxes[g[0]]);
            let o = iou_oracle(&pred.entity_boxes[t.object], &gt.boxes[g[2]]);
            (s >= thr && o >= thr).then_some(s.min(o))
        }
    }
}

/// Exhaustive search over every assignment of predictions to unclaimed
/// GTs, keeping the one that follows rank order: each prediction, in rank
/// order, must take its most preferred remaining candidate (best
/// localization, then smallest GT sort key, then GT index).
pub fn matching_oracle(pred: &ImagePrediction, gt: &GroundTruth, mode: EvalMode, thr: f64) -> Vec<Option<usize>> {
    let key = |gi: usize| {
        let g = gt.triplets[gi];
        let bits = |b: &BBox| [b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()];
        (gt.entity_classes[g[0]], g[1], gt.entity_classes[g[2]], bits(&gt.boxes[g[0]]), bits(&gt.boxes[g[2]]))
    };
    let n = gt.triplets.len();
    // Enumerate all partial injective assignments and keep the rank-greedy one.
    fn search(
        rank: usize,
        pred: &ImagePrediction,
        cand: &dyn Fn(usize, usize) -> Option<f64>,
        claimed: &mut Vec<Option<usize>>,
        prefer: &dyn Fn(usize, f64, usize, f64) -> bool,
        out: &mut Option<Vec<Option<usize>>>,
    ) {
        if rank == pred.triplets.len() {
            *out = Some(claimed.clone());
            return;
        }
        let options: Vec<(usize, f64)> =
            (0..claimed.len()).filter(|&g| claimed[g].is_none()).filter_map(|g| cand(rank, g).map(|q| (g, q))).collect();
        if options.is_empty() {
            search(rank + 1, pred, cand, claimed, prefer, out);
            return;
        }
        for &(g, q) in &options {
            let dominated = options.iter().any(|&(h, r)| h != g && prefer(h, r, g, q));
            if dominated {
                continue;
            }
            claimed[g] = Some(rank);
            search(rank + 1, pred, cand, claimed, prefer, out);
            claimed[g] = None;
        }
    }
    let cand = |rank: usize, g: usize| fit(pred, gt, &pred.triplets[rank], &gt.triplets[g], mode, thr);
    let prefer = |h: usize, r: f64, g: usize, q: f64| r > q || (r == q && (key(h), h) < (key(g), g));
    let mut claimed = vec![None; n];
    let mut out = None;
    search(0, pred, &cand, &mut claimed, &prefer, &mut out);
    out.expect("one assignment always exists")
}

/// R@K averaged over images with GT, and mR@K over classes present.
pub fn recall_oracle(images: &[(Vec<usize>, Vec<Option<usize>>)], k: usize, num_classes: usize) -> (f64, f64) {
    let mut per_image = Vec::new();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for (classes, matches) in images {
        if classes.is_empty() {
            continue;
        }
        let hit = |i: usize| matches[i].is_some_and(|r| r < k);
        per_image.push((0..classes.len()).filter(|&i| hit(i)).count() as f64 / classes.len() as f64);
        for c in 0..num_classes {
            let idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
            if !idx.is_empty() {
                per_class[c].push(idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len() as f64);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let class_means: Vec<f64> = per_class.iter().filter(|v| !v.is_empty()).map(|v| mean(v)).collect();
    (mean(&per_image), mean(&class_means))
}

/// A random ≤6-entity instance: GT, and a ranked prediction list that
/// reuses GT boxes, nearby boxes and random ones.
pub fn random_instance(seed: u64, num_entity_classes: usize, num_predicates: usize) -> (ImagePrediction, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0));
        BBox::new(x, y, x + rng.gen_range(5.0..40.0), y + rng.gen_range(5.0..40.0))
    };
    let boxes: Vec<BBox> = (0..n).map(|_| rand_box(&mut rng)).collect();
    let entity_classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_entity_classes)).collect();
    let mut triplets = Vec::new();
    for _ in 0..rng.gen_range(0..=6) {
        let (s, o) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if s != o {
            triplets.push([s, rng.gen_range(0..num_predicates), o]);
        }
    }
    let np = rng.gen_range(1..=7);
    let entity_boxes: Vec<BBox> = (0..np)
        .map(|i| {
            if i < n && rng.gen_bool(0.7) {
                let b = &boxes[i];
                let d = rng.gen_range(-3.0..3.0);
                BBox::new(b.x1 + d, b.y1, b.x2 + d, b.y2)
            } else {
                rand_box(&mut rng)
            }
        })
        .collect();
    let entity_labels: Vec<usize> =
        (0..np).map(|i| if i < n && rng.gen_bool(0.7) { entity_classes[i] } else { rng.gen_range(0..num_entity_classes) }).collect();
    let mut ranked = Vec::new();
    for _ in 0..rng.gen_range(0..=12) {
        let (s, o) = (rng.gen_range(0..np), rng.gen_range(0..np));
        if s != o {
            ranked.push(RankedTriplet { subject: s, predicate: rng.gen_range(0..num_predicates), object: o, score: 0.0 });
        }
    }
    let m = ranked.len();
    for (r, t) in ranked.iter_mut().enumerate() {
        t.score = (m - r) as f64;
    }
    let pred = ImagePrediction { image_id: seed, triplets: ranked, entity_labels, entity_boxes, pair_confidence: Vec::new() };
    (pred, GroundTruth { triplets, entity_classes, boxes })
}

pub const BGNN_DIMS: StageDims = StageDims { entity_dim: 5, predicate_dim: 4, num_entity_classes: 3, num_predicate_classes: 6, rce_hidden: 7 };

pub struct RandomGraph {
    pub store: ParamStore,
    pub params: BgnnParams,
    pub cfg: BgnnConfig,
    pub entities: Tensor,
    pub predicates: Tensor,
    pub simplices: Tensor,
    pub pairs: Vec<(usize, usize)>,
}

pub fn random_graph(seed: u64, cfg: BgnnConfig) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=7);
    let mut store = ParamStore::new();
    let params = BgnnParams::new(&mut store, &cfg, BGNN_DIMS, &mut rng).unwrap();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.5) {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    let entities = glorot(n, BGNN_DIMS.entity_dim, &mut rng);
    let predicates = glorot(pairs.len(), BGNN_DIMS.predicate_dim, &mut rng);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..BGNN_DIMS.num_entity_classes).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    RandomGraph { store, params, cfg, entities, predicates, simplices: Tensor::from_rows(&rows).unwrap(), pairs }
}

impl RandomGraph {
    pub fn on_tape(&self, tape: &mut Tape) -> (BipartiteGraph, bgnn::numeric::Var) {
        let entities = tape.constant(self.entities.clone()).unwrap();
        let predicates = tape.constant(self.predicates.clone()).unwrap();
        let simplices = tape.constant(self.simplices.clone()).unwrap();
        let topology = Topology::new(self.entities.rows(), &self.pairs).unwrap();
        (BipartiteGraph { entities, predicates, topology }, simplices)
    }

    /// Final entity and predicate features of the full multi-stage pass.
    pub fn run(&self) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let (g, s) = self.on_tape(&mut tape);
        let out = run_bgnn(&mut tape, &self.store, &self.params, &self.cfg, &g, s).unwrap();
        (tape.value(out.graph.entities).clone(), tape.value(out.graph.predicates).clone())
    }
}

/// Small synthetic set for training smoke tests.
pub fn small_config(seed: u64, n_images: usize) -> RunConfig {
    let mut cfg = RunConfig { seed, ..Default::default() };
    cfg.synth = SynthConfig { n_images, seed, ..Default::default() };
    cfg.model.embed_dim = 8;
    cfg.model.entity_dim = 16;
    cfg.model.predicate_dim = 16;
    cfg.model.rce_hidden = 16;
    cfg.train.log_every = 1;
    cfg
}
