use crate::error::{ensure, Result};

/// Per-image recall at K: fraction of GT claimed at rank `< k`. `None`
/// when the image has no GT.
pub fn recall_at_k(matches: &[Option<usize>], k: usize) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    let hit = matches.iter().filter(|m| m.is_some_and(|r| r < k)).count();
    Some(hit as f64 / matches.len() as f64)
}

/// Unweighted mean over classes that have a recall value.
pub fn mean_recall_at_k(per_class: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Streams per-image match results into R@K and per-class R@K.
///
/// R@K averages per-image recall over images with GT. Class `c`'s recall
/// averages, over images containing class `c`, the fraction of that image's
/// class-`c` GT recalled.
#[derive(Clone, Debug)]
pub struct RecallAccumulator {
    ks: Vec<usize>,
    num_classes: usize,
    image_sum: Vec<f64>,
    images: usize,
    class_sum: Vec<Vec<f64>>,
    class_images: Vec<usize>,
    class_instances: Vec<u64>,
}

impl RecallAccumulator {
    pub fn new(ks: &[usize], num_classes: usize) -> Result<Self> {
        ensure!(ks.iter().all(|k| *k > 0), Domain, "K must be positive, got {ks:?}");
        Ok(Self {
            ks: ks.to_vec(),
            num_classes,
            image_sum: vec![0.0; ks.len()],
            images: 0,
            class_sum: vec![vec![0.0; num_classes]; ks.len()],
            class_images: vec![0; num_classes],
            class_instances: vec![0; num_classes],
        })
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    /// `gt_classes[g]` is the predicate class of GT `g`, `matches[g]` the
    /// rank that claimed it.
    pub fn add_image(&mut self, gt_classes: &[usize], matches: &[Option<usize>]) -> Result<()> {
        ensure!(gt_classes.len() == matches.len(), Dimension, "{} GT classes for {} matches", gt_classes.len(), matches.len());
        if matches.is_empty() {
            return Ok(());
        }
        self.images += 1;
        for (ki, &k) in self.ks.iter().enumerate() {
            self.image_sum[ki] += recall_at_k(matches, k).unwrap_or(0.0);
        }
        for c in 0..self.num_classes {
            let idx: Vec<usize> = (0..gt_classes.len()).filter(|&g| gt_classes[g] == c).collect();
            if idx.is_empty() {
                continue;
            }
            self.class_images[c] += 1;
            self.class_instances[c] += idx.len() as u64;
            for (ki, &k) in self.ks.iter().enumerate() {
                let hit = idx.iter().filter(|&&g| matches[g].is_some_and(|r| r < k)).count();
                self.class_sum[ki][c] += hit as f64 / idx.len() as f64;
            }
        }
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.images
    }

    pub fn recall(&self) -> Vec<f64> {
        self.image_sum.iter().map(|s| if self.images == 0 { 0.0 } else { s / self.images as f64 }).collect()
    }

    /// Per-K, per-class recall; `None` for classes absent from the split.
    pub fn per_class(&self) -> Vec<Vec<Option<f64>>> {
        self.class_sum
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.class_images)
                    .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                    .collect()
            })
            .collect()
    }

    pub fn mean_recall(&self) -> Vec<f64> {
        self.per_class().iter().map(|pc| mean_recall_at_k(pc).unwrap_or(0.0)).collect()
    }

    pub fn class_instances(&self) -> &[u64] {
        &self.class_instances
    }
}
