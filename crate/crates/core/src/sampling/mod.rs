//! Bi-level resampling: images holding rare predicates are repeated, and
//! within each repeated copy the instances of more common predicates are
//! randomly dropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::proposals::{DatasetManifest, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// When false every epoch visits each training image once, keeping all
    /// instances.
    pub enabled: bool,
    /// Repeat threshold `t`.
    pub repeat_threshold: f64,
    /// Drop scale `γ_d`.
    pub drop_gamma: f64,
    /// Use `max(·, 1)` instead of a clamp to `[0, 1]` for the drop rate.
    /// This drops every non-rarest instance and exists only for auditing.
    pub strict_drop_formula: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { enabled: true, repeat_threshold: 0.07, drop_gamma: 0.7, strict_drop_formula: false }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.repeat_threshold > 0.0 && self.repeat_threshold.is_finite(), Config, "repeat_threshold must be positive");
        ensure!(self.drop_gamma >= 0.0 && self.drop_gamma.is_finite(), Config, "drop_gamma must be >= 0");
        Ok(())
    }
}

/// `max(1, sqrt(t / f_c))`.
pub fn repeat_factor(f_c: f64, t: f64) -> Result<f64> {
    ensure!(f_c > 0.0 && t > 0.0, Domain, "repeat factor needs positive frequency and threshold, got f={f_c}, t={t}");
    Ok((t / f_c).sqrt().max(1.0))
}

/// Largest repeat factor among the classes present; 1 for an image
/// without annotations.
pub fn image_repeat(classes: &[usize], r_table: &[f64]) -> f64 {
    classes.iter().map(|&c| r_table[c]).fold(1.0, f64::max)
}

/// `clamp((r_i − r_c)/r_i · γ_d, 0, 1)`, or the literal `max(·, 1)` form
/// when `strict` is set.
pub fn instance_drop_rate(r_i: f64, r_c: f64, gamma_d: f64, strict: bool) -> Result<f64> {
    ensure!(r_i > 0.0, Domain, "image repeat factor must be positive, got {r_i}");
    let x = (r_i - r_c) / r_i * gamma_d;
    Ok(if strict { x.max(1.0) } else { x.clamp(0.0, 1.0) })
}

/// Fraction of images containing each class. Classes that never occur get 0.
pub fn class_frequency(image_classes: &[Vec<usize>], num_classes: usize) -> Result<Vec<f64>> {
    ensure!(!image_classes.is_empty(), Contract, "class frequency of an empty image set");
    let mut seen = vec![0usize; num_classes];
    for classes in image_classes {
        let mut present = vec![false; num_classes];
        for &c in classes {
            ensure!(c < num_classes, Index, "predicate class {c} >= {num_classes}");
            present[c] = true;
        }
        for (s, p) in seen.iter_mut().zip(present) {
            *s += p as usize;
        }
    }
    Ok(seen.into_iter().map(|s| s as f64 / image_classes.len() as f64).collect())
}

/// One visit of an image within an epoch; `keep[k]` says whether its
/// `k`-th annotated predicate instance is supervised in this visit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub image: usize,
    pub keep: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub seed: u64,
    /// In image order; the trainer decides visiting order.
    pub entries: Vec<EpochEntry>,
}

/// Precomputed repeat and drop tables for a fixed image set.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub config: SamplerConfig,
    /// Identifier of each image as the caller knows it.
    pub image_ids: Vec<usize>,
    pub image_classes: Vec<Vec<usize>>,
    pub frequency: Vec<f64>,
    pub repeat_table: Vec<f64>,
    pub image_repeat: Vec<f64>,
    /// Per image, per instance drop probability.
    pub drop: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn new(image_ids: Vec<usize>, image_classes: Vec<Vec<usize>>, num_classes: usize, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        ensure!(image_ids.len() == image_classes.len(), Dimension, "{} ids for {} images", image_ids.len(), image_classes.len());
        let frequency = class_frequency(&image_classes, num_classes)?;
        let repeat_table = frequency
            .iter()
            .map(|&f| if config.enabled && f > 0.0 { repeat_factor(f, config.repeat_threshold) } else { Ok(1.0) })
            .collect::<Result<Vec<_>>>()?;
        let image_repeat: Vec<f64> = image_classes.iter().map(|c| image_repeat(c, &repeat_table)).collect();
        let gamma = if config.enabled { config.drop_gamma } else { 0.0 };
        let drop = image_classes
            .iter()
            .zip(&image_repeat)
            .map(|(cs, &ri)| cs.iter().map(|&c| instance_drop_rate(ri, repeat_table[c], gamma, config.strict_drop_formula)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { config, image_ids, image_classes, frequency, repeat_table, image_repeat, drop })
    }

    /// Sampler over the training split; entry ids index `manifest.images`.
    pub fn from_manifest(manifest: &DatasetManifest, config: SamplerConfig) -> Result<Self> {
        let (ids, classes): (Vec<usize>, Vec<Vec<usize>>) = manifest
            .images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.split == Split::Train)
            .map(|(i, im)| (i, im.gt_triplets.iter().map(|t| t[1]).collect()))
            .unzip();
        Self::new(ids, classes, manifest.num_predicate_classes(), config)
    }

    /// Realizes one epoch: `floor(r_i)` copies plus one more with
    /// probability `frac(r_i)`, and independent per-instance drops per copy.
    pub fn build_epoch(&self, seed: u64) -> SamplerPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for (idx, &ri) in self.image_repeat.iter().enumerate() {
            let base = ri.floor();
            let frac = ri - base;
            let copies = base as usize + usize::from(frac > 0.0 && rng.gen::<f64>() < frac);
            for _ in 0..copies {
                let keep = self.drop[idx].iter().map(|&d| d <= 0.0 || (d < 1.0 && rng.gen::<f64>() >= d)).collect();
                entries.push(EpochEntry { image: self.image_ids[idx], keep });
            }
        }
        SamplerPlan { seed, entries }
    }

    /// Expected number of supervised instances of each class per epoch,
    /// `Σ_i r_i (1 − d_i^c)` over instances.
    pub fn expected_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.frequency.len()];
        for ((classes, drops), &ri) in self.image_classes.iter().zip(&self.drop).zip(&self.image_repeat) {
            for (&c, &d) in classes.iter().zip(drops) {
                out[c] += ri * (1.0 - d.min(1.0));
            }
        }
        out
    }

    /// Monte-Carlo comparison of realized vs. expected instance counts.
    pub fn audit(&self, epochs: usize, seed: u64) -> Result<AuditReport> {
        ensure!(epochs > 0, Contract, "audit needs at least one epoch");
        let idx_of: std::collections::HashMap<usize, usize> = self.image_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut totals = vec![0u64; self.frequency.len()];
        let mut copies = 0u64;
        for e in 0..epochs {
            let plan = self.build_epoch(seed.wrapping_add(e as u64));
            copies += plan.entries.len() as u64;
            for entry in &plan.entries {
                let classes = &self.image_classes[idx_of[&entry.image]];
                for (&c, &k) in classes.iter().zip(&entry.keep) {
                    totals[c] += k as u64;
                }
            }
        }
        let expected = self.expected_counts();
        let classes = (0..self.frequency.len())
            .map(|c| ClassAudit {
                class: c,
                f: self.frequency[c],
                r_c: self.repeat_table[c],
                mean_effective_count: totals[c] as f64 / epochs as f64,
                expected_count: expected[c],
            })
            .collect();
        Ok(AuditReport {
            epochs,
            seed,
            num_images: self.image_ids.len(),
            mean_epoch_length: copies as f64 / epochs as f64,
            expected_epoch_length: self.image_repeat.iter().sum(),
            classes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAudit {
    pub class: usize,
    pub f: f64,
    pub r_c: f64,
    pub mean_effective_count: f64,
    pub expected_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epochs: usize,
    pub seed: u64,
    pub num_images: usize,
    pub mean_epoch_length: f64,
    pub expected_epoch_length: f64,
    pub classes: Vec<ClassAudit>,
}

impl AuditReport {
    /// Largest relative deviation between realized and expected counts
    /// over classes with a nonzero expectation.
    pub fn max_relative_deviation(&self) -> f64 {
        self.classes
            .iter()
            .filter(|c| c.expected_count > 0.0)
            .map(|c| (c.mean_effective_count - c.expected_count).abs() / c.expected_count)
            .fold(0.0, f64::max)
    }
}
