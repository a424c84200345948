use std::collections::HashSet;

use crate::error::{ensure, Result};

use super::{DatasetManifest, Split};

/// Smoothed `p(predicate | subject class, object class)` with background
/// in the last slot.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPrior {
    num_entity: usize,
    num_slots: usize,
    table: Vec<f64>,
}

impl FrequencyPrior {
    /// Number of predicate slots, foreground classes plus background.
    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn num_entity_classes(&self) -> usize {
        self.num_entity
    }

    pub fn slice(&self, subj: usize, obj: usize) -> &[f64] {
        let start = (subj * self.num_entity + obj) * self.num_slots;
        &self.table[start..start + self.num_slots]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// A flat prior (every slice uniform).
    pub fn uniform(num_entity: usize, num_predicate: usize) -> Self {
        let num_slots = num_predicate + 1;
        Self { num_entity, num_slots, table: vec![1.0 / num_slots as f64; num_entity * num_entity * num_slots] }
    }

    pub fn from_table(num_entity: usize, num_slots: usize, table: Vec<f64>) -> Result<Self> {
        ensure!(
            table.len() == num_entity * num_entity * num_slots,
            Dimension,
            "prior table has {} values for {num_entity}x{num_entity}x{num_slots}",
            table.len()
        );
        ensure!(table.iter().all(|p| *p > 0.0 && p.is_finite()), Domain, "prior entries must be positive");
        Ok(Self { num_entity, num_slots, table })
    }
}

/// Counts `(subject class, predicate, object class)` over the training
/// split. Every ordered entity pair without an annotation counts once as
/// background. Each `(s, o)` slice is Laplace-smoothed with `epsilon`.
pub fn build_frequency_prior(manifest: &DatasetManifest, epsilon: f64) -> Result<FrequencyPrior> {
    ensure!(epsilon > 0.0, Domain, "prior smoothing must be positive, got {epsilon}");
    let ne = manifest.num_entity_classes();
    let slots = manifest.num_predicate_classes() + 1;
    let bg = slots - 1;
    let mut counts = vec![0u64; ne * ne * slots];
    let mut n_triplets = 0usize;
    for im in manifest.split(Split::Train) {
        let cls = &im.gt_entity_classes;
        let mut annotated = HashSet::new();
        for t in &im.gt_triplets {
            counts[(cls[t[0]] * ne + cls[t[2]]) * slots + t[1]] += 1;
            annotated.insert((t[0], t[2]));
            n_triplets += 1;
        }
        let n = cls.len();
        for i in 0..n {
            for j in 0..n {
                if i != j && !annotated.contains(&(i, j)) {
                    counts[(cls[i] * ne + cls[j]) * slots + bg] += 1;
                }
            }
        }
    }
    ensure!(n_triplets > 0, Contract, "frequency prior needs at least one training triplet");
    let mut table = vec![0.0; counts.len()];
    for (slice_out, slice_in) in table.chunks_mut(slots).zip(counts.chunks(slots)) {
        let total: u64 = slice_in.iter().sum();
        let denom = total as f64 + epsilon * slots as f64;
        for (p, c) in slice_out.iter_mut().zip(slice_in) {
            *p = (*c as f64 + epsilon) / denom;
        }
    }
    Ok(FrequencyPrior { num_entity: ne, num_slots: slots, table })
}
