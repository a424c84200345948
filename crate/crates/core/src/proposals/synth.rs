//! Seeded long-tail scene generator.
//!
//! Every entity class and predicate class owns a latent prototype. Visual
//! features are the entity prototype plus Gaussian noise; union features of
//! related pairs carry the predicate prototype, unrelated pairs carry only
//! the entity-pair component. Predicate classes are drawn from a power law
//! and less frequent predicates partly share their prototype with a more
//! frequent "parent" class, so rare classes are easily confused with
//! common ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::eval::partition_groups;
use crate::numeric::softmax;

use super::{BBox, DatasetManifest, EntityProposal, ImageRecord, ManifestMeta, ProposalSet, Split, UnionFeature};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_images: usize,
    /// Inclusive range of entities per image.
    pub n_entities_range: [usize; 2],
    /// Inclusive range of annotated triplets per image.
    pub triplets_range: [usize; 2],
    pub num_entity_classes: usize,
    pub num_predicate_classes: usize,
    pub feature_dim: usize,
    pub longtail_exponent: f64,
    /// `[head_above, tail_below]` instance counts. When absent the classes
    /// are split into thirds by training frequency.
    pub group_cuts: Option<[u64; 2]>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub image_size: [f64; 2],
    /// Weight of the parent prototype in a predicate prototype, in [0, 1).
    pub prototype_overlap: f64,
    /// Probability that a triplet endpoint reuses an existing entity of the
    /// right class.
    pub entity_reuse_prob: f64,
    /// Logit margin of the true class in detector simplices.
    pub detector_margin: f64,
    pub detections: bool,
    pub box_jitter: f64,
    pub spurious_detection_prob: f64,
    /// Upper bound on spurious detections per image, each added with
    /// `spurious_detection_prob`.
    pub max_spurious_detections: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            n_entities_range: [3, 7],
            triplets_range: [1, 4],
            num_entity_classes: 10,
            num_predicate_classes: 15,
            feature_dim: 16,
            longtail_exponent: 1.5,
            group_cuts: None,
            noise_sigma: 1.0,
            seed: 0,
            test_fraction: 0.25,
            image_size: [512.0, 512.0],
            prototype_overlap: 0.6,
            entity_reuse_prob: 0.4,
            detector_margin: 3.0,
            detections: true,
            box_jitter: 0.05,
            spurious_detection_prob: 0.3,
            max_spurious_detections: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [nmin, nmax] = self.n_entities_range;
        let [tmin, tmax] = self.triplets_range;
        ensure!(nmin >= 2 && nmin <= nmax, Contract, "entity range {nmin}..={nmax} needs 2 <= min <= max");
        ensure!(tmin <= tmax, Contract, "triplet range {tmin}..={tmax} is empty");
        ensure!(
            tmax <= nmin * (nmin - 1),
            Contract,
            "up to {tmax} triplets cannot fit in the {} ordered pairs of a {nmin}-entity image",
            nmin * (nmin - 1)
        );
        ensure!(self.num_entity_classes > 0 && self.num_predicate_classes > 0, Contract, "class counts must be positive");
        ensure!(self.feature_dim > 0, Contract, "feature_dim must be positive");
        ensure!(self.longtail_exponent >= 0.0 && self.longtail_exponent.is_finite(), Domain, "longtail_exponent must be >= 0");
        ensure!(self.noise_sigma >= 0.0, Domain, "noise_sigma must be >= 0");
        ensure!((0.0..1.0).contains(&self.test_fraction), Domain, "test_fraction must be in [0, 1)");
        ensure!((0.0..1.0).contains(&self.prototype_overlap), Domain, "prototype_overlap must be in [0, 1)");
        ensure!((0.0..=1.0).contains(&self.entity_reuse_prob), Domain, "entity_reuse_prob must be in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.spurious_detection_prob), Domain, "spurious_detection_prob must be in [0, 1]");
        ensure!(self.image_size[0] >= 16.0 && self.image_size[1] >= 16.0, Domain, "image too small");
        Ok(())
    }

    /// Target predicate class distribution, `p_k ∝ (k+1)^-exponent`.
    pub fn predicate_distribution(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.num_predicate_classes).map(|k| ((k + 1) as f64).powf(-self.longtail_exponent)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

struct World {
    entity_protos: Vec<Vec<f64>>,
    predicate_protos: Vec<Vec<f64>>,
    subj_pref: Vec<Vec<usize>>,
    obj_pref: Vec<Vec<usize>>,
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    (0..dim).map(|_| n.sample(rng)).collect()
}

impl World {
    fn sample<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Self {
        let d = cfg.feature_dim;
        let entity_protos = (0..cfg.num_entity_classes).map(|_| gaussian_vec(rng, d, 1.0)).collect();
        let overlap = cfg.prototype_overlap;
        let fresh = (1.0 - overlap * overlap).sqrt();
        let mut predicate_protos: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_predicate_classes);
        for k in 0..cfg.num_predicate_classes {
            let own = gaussian_vec(rng, d, 1.0);
            if k == 0 {
                predicate_protos.push(own);
            } else {
                let parent = rng.gen_range(0..k);
                let p: Vec<f64> = predicate_protos[parent].iter().zip(&own).map(|(a, b)| overlap * a + fresh * b).collect();
                predicate_protos.push(p);
            }
        }
        let ne = cfg.num_entity_classes;
        let prefs = |rng: &mut R| -> Vec<Vec<usize>> {
            (0..cfg.num_predicate_classes)
                .map(|_| {
                    let mut all: Vec<usize> = (0..ne).collect();
                    all.shuffle(rng);
                    all.truncate(ne.min(2));
                    all
                })
                .collect()
        };
        let subj_pref = prefs(rng);
        let obj_pref = prefs(rng);
        Self { entity_protos, predicate_protos, subj_pref, obj_pref }
    }

    fn union_feature<R: Rng>(&self, rng: &mut R, cs: usize, co: usize, preds: &[usize], sigma: f64) -> Vec<f64> {
        let mut u = gaussian_vec(rng, self.entity_protos[cs].len(), sigma);
        for (x, (a, b)) in u.iter_mut().zip(self.entity_protos[cs].iter().zip(&self.entity_protos[co])) {
            *x += 0.5 * (a - b);
        }
        for &k in preds {
            for (x, p) in u.iter_mut().zip(&self.predicate_protos[k]) {
                *x += p;
            }
        }
        u
    }
}

fn random_box<R: Rng>(rng: &mut R, w: f64, h: f64) -> BBox {
    let bw = rng.gen_range(0.1..0.5) * w;
    let bh = rng.gen_range(0.1..0.5) * h;
    let x1 = rng.gen_range(0.0..(w - bw));
    let y1 = rng.gen_range(0.0..(h - bh));
    BBox::new(x1, y1, x1 + bw, y1 + bh)
}

fn jitter_box<R: Rng>(rng: &mut R, b: &BBox, jitter: f64, w: f64, h: f64) -> BBox {
    let n = Normal::new(0.0, jitter.max(1e-9)).expect("finite jitter");
    let (bw, bh) = (b.width(), b.height());
    let mut out = BBox::new(
        b.x1 + n.sample(rng) * bw,
        b.y1 + n.sample(rng) * bh,
        b.x2 + n.sample(rng) * bw,
        b.y2 + n.sample(rng) * bh,
    )
    .clamp_to(w, h);
    if out.x2 - out.x1 < 1.0 {
        out = BBox::new(b.x1, out.y1, b.x2, out.y2);
    }
    if out.y2 - out.y1 < 1.0 {
        out = BBox::new(out.x1, b.y1, out.x2, b.y2);
    }
    out
}

fn detector_output<R: Rng>(rng: &mut R, class: usize, ne: usize, margin: f64) -> (usize, Vec<f64>) {
    let mut logits = gaussian_vec(rng, ne, 1.0);
    logits[class] += margin;
    let p = softmax(&logits);
    let argmax = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(i, _)| i);
    (argmax, p)
}

/// Generates a manifest deterministically from `cfg` (including its seed).
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::sample(cfg, &mut rng);
    let pred_dist = WeightedIndex::new(cfg.predicate_distribution()).expect("positive weights");
    let ne = cfg.num_entity_classes;
    let [w, h] = cfg.image_size;
    let sigma = cfg.noise_sigma;
    let n_test = (cfg.n_images as f64 * cfg.test_fraction).round() as usize;
    let n_train = cfg.n_images - n_test;

    let mut images = Vec::with_capacity(cfg.n_images);
    for image_id in 0..cfg.n_images {
        let n_target = rng.gen_range(cfg.n_entities_range[0]..=cfg.n_entities_range[1]);
        let n_trip = rng.gen_range(cfg.triplets_range[0]..=cfg.triplets_range[1]);
        let mut classes: Vec<usize> = Vec::new();
        let mut triplets: Vec<[usize; 3]> = Vec::new();
        let mut attempts = 0;
        while triplets.len() < n_trip && attempts < 1000 {
            attempts += 1;
            let k = pred_dist.sample(&mut rng);
            let cs = *world.subj_pref[k].choose(&mut rng).expect("non-empty");
            let co = *world.obj_pref[k].choose(&mut rng).expect("non-empty");
            let pick = |cls: usize, classes: &mut Vec<usize>, rng: &mut ChaCha8Rng, avoid: Option<usize>| -> Option<usize> {
                let existing: Vec<usize> =
                    (0..classes.len()).filter(|&i| classes[i] == cls && Some(i) != avoid).collect();
                let room = classes.len() < n_target;
                if !existing.is_empty() && (!room || rng.gen_bool(cfg.entity_reuse_prob)) {
                    return existing.choose(rng).copied();
                }
                if room {
                    classes.push(cls);
                    return Some(classes.len() - 1);
                }
                None
            };
            let Some(s) = pick(cs, &mut classes, &mut rng, None) else { continue };
            let Some(o) = pick(co, &mut classes, &mut rng, Some(s)) else { continue };
            if triplets.iter().any(|t| t[0] == s && t[2] == o) {
                continue;
            }
            triplets.push([s, k, o]);
        }
        while classes.len() < n_target {
            classes.push(rng.gen_range(0..ne));
        }

        let entities: Vec<EntityProposal> = classes
            .iter()
            .map(|&c| {
                let bbox = random_box(&mut rng, w, h);
                let mut feature = gaussian_vec(&mut rng, cfg.feature_dim, sigma);
                feature.iter_mut().zip(&world.entity_protos[c]).for_each(|(f, p)| *f += p);
                let (detected_class, class_simplex) = detector_output(&mut rng, c, ne, cfg.detector_margin);
                EntityProposal { bbox, detected_class, class_simplex, feature }
            })
            .collect();

        let preds_of = |i: usize, j: usize| -> Vec<usize> {
            triplets.iter().filter(|t| t[0] == i && t[2] == j).map(|t| t[1]).collect()
        };
        let n = classes.len();
        let mut union_features = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let feature = world.union_feature(&mut rng, classes[i], classes[j], &preds_of(i, j), sigma);
                    union_features.push(UnionFeature { pair: [i, j], feature });
                }
            }
        }

        let detections = if cfg.detections {
            // detection index -> (source entity, class)
            let mut source: Vec<(Option<usize>, usize)> = (0..n).map(|i| (Some(i), classes[i])).collect();
            let mut det_entities: Vec<EntityProposal> = entities
                .iter()
                .zip(&classes)
                .map(|(e, &c)| {
                    let bbox = jitter_box(&mut rng, &e.bbox, cfg.box_jitter, w, h);
                    let mut feature = e.feature.clone();
                    feature.iter_mut().for_each(|f| *f += 0.1 * sigma * Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
                    let (detected_class, class_simplex) = detector_output(&mut rng, c, ne, cfg.detector_margin);
                    EntityProposal { bbox, detected_class, class_simplex, feature }
                })
                .collect();
            for _ in 0..cfg.max_spurious_detections {
                if !rng.gen_bool(cfg.spurious_detection_prob) {
                    continue;
                }
                let c = rng.gen_range(0..ne);
                let bbox = random_box(&mut rng, w, h);
                let mut feature = gaussian_vec(&mut rng, cfg.feature_dim, sigma);
                feature.iter_mut().zip(&world.entity_protos[c]).for_each(|(f, p)| *f += p);
                let (detected_class, class_simplex) = detector_output(&mut rng, c, ne, cfg.detector_margin);
                det_entities.push(EntityProposal { bbox, detected_class, class_simplex, feature });
                source.push((None, c));
            }
            let nd = det_entities.len();
            let mut det_unions = Vec::with_capacity(nd * (nd - 1));
            for a in 0..nd {
                for b in 0..nd {
                    if a == b {
                        continue;
                    }
                    let preds = match (source[a].0, source[b].0) {
                        (Some(i), Some(j)) => preds_of(i, j),
                        _ => Vec::new(),
                    };
                    let feature = world.union_feature(&mut rng, source[a].1, source[b].1, &preds, sigma);
                    det_unions.push(UnionFeature { pair: [a, b], feature });
                }
            }
            Some(ProposalSet { entities: det_entities, union_features: det_unions })
        } else {
            None
        };

        images.push(ImageRecord {
            image_id: image_id as u64,
            width: w,
            height: h,
            split: if image_id < n_train { Split::Train } else { Split::Test },
            entities,
            gt_entity_classes: classes,
            gt_triplets: triplets,
            union_features,
            detections,
        });
    }

    let mut counts = vec![0u64; cfg.num_predicate_classes];
    for im in images.iter().filter(|im| im.split == Split::Train) {
        for t in &im.gt_triplets {
            counts[t[1]] += 1;
        }
    }
    let cuts = cfg.group_cuts.unwrap_or_else(|| tertile_cuts(&counts));
    let partition = partition_groups(&counts, (cuts[0], cuts[1]));
    let manifest = DatasetManifest {
        classes_entity: (0..ne).map(|c| format!("entity_{c}")).collect(),
        classes_predicate: (0..cfg.num_predicate_classes).map(|k| format!("predicate_{k}")).collect(),
        meta: Some(ManifestMeta { group_cuts: cuts, predicate_groups: partition.groups, predicate_counts: counts }),
        images,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Cuts that put the most frequent third of classes in head and the least
/// frequent third in tail (ties may move a class to a neighboring group).
fn tertile_cuts(counts: &[u64]) -> [u64; 2] {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let c = sorted.len();
    if c < 3 {
        return [u64::MAX, 0];
    }
    let n_head = c.div_ceil(3);
    let n_tail = c / 3;
    let head_above = sorted[n_head - 1].saturating_sub(1);
    let tail_below = sorted[c - n_tail] + 1;
    [head_above, tail_below.min(head_above)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bytes() {
        let cfg = SynthConfig { n_images: 20, ..Default::default() };
        let a = generate_synthetic_dataset(&cfg).unwrap().to_json().unwrap();
        let b = generate_synthetic_dataset(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = SynthConfig { n_entities_range: [2, 2], triplets_range: [3, 3], ..Default::default() };
        assert!(generate_synthetic_dataset(&cfg).is_err());
    }

    #[test]
    fn tertiles_give_three_groups() {
        let counts: Vec<u64> = (0..9).map(|k| 100 - 10 * k).collect();
        let [hi, lo] = tertile_cuts(&counts);
        let p = partition_groups(&counts, (hi, lo));
        use crate::eval::Group::*;
        assert_eq!(p.groups, vec![Head, Head, Head, Body, Body, Body, Tail, Tail, Tail]);
    }
}
