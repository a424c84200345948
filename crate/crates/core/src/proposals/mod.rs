//! Entity and predicate proposals, their initial representations and the
//! class frequency prior.

mod manifest;
mod prior;
mod repr;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use manifest::{union_feature, DatasetManifest, EntityProposal, ImageRecord, ManifestMeta, ProposalSet, Split, UnionFeature};
pub use prior::{build_frequency_prior, FrequencyPrior};
pub use repr::{embedding_lookup, entity_representation, predicate_representation, RepresentationParams};
pub use synth::{generate_synthetic_dataset, SynthConfig};

/// Axis-aligned box in pixel coordinates, serialized as `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.x2 > self.x1 && self.y2 > self.y1,
            Domain,
            "degenerate box {:?}",
            <[f64; 4]>::from(*self)
        );
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(self.x1.min(other.x1), self.y1.min(other.y1), self.x2.max(other.x2), self.y2.max(other.y2))
    }

    pub fn clamp_to(&self, w: f64, h: f64) -> BBox {
        BBox::new(self.x1.clamp(0.0, w), self.y1.clamp(0.0, h), self.x2.clamp(0.0, w), self.y2.clamp(0.0, h))
    }
}

pub const GEOMETRY_DIM: usize = 8;

/// Normalized box encoding
/// `[x1/W, y1/H, x2/W, y2/H, cx/W, cy/H, w/W, h/H]`.
pub fn geometry_encode(b: &BBox, image_w: f64, image_h: f64) -> Result<[f64; GEOMETRY_DIM]> {
    ensure!(image_w > 0.0 && image_h > 0.0, Domain, "image extent {image_w}x{image_h} has zero area");
    b.validate()?;
    let b = b.clamp_to(image_w, image_h);
    let cx = 0.5 * (b.x1 + b.x2);
    let cy = 0.5 * (b.y1 + b.y2);
    Ok([
        b.x1 / image_w,
        b.y1 / image_h,
        b.x2 / image_w,
        b.y2 / image_h,
        cx / image_w,
        cy / image_h,
        b.width() / image_w,
        b.height() / image_h,
    ])
}

/// A candidate relationship between two distinct entities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredicateProposal {
    pub subject: usize,
    pub object: usize,
    pub union_feature: Vec<f64>,
}

/// All ordered pairs `(i, j)`, `i != j`. With `max_pairs`, keeps the pairs
/// with the largest `entity_scores[i] * entity_scores[j]`, ties going to the
/// lexicographically smaller pair. Output is in `(i, j)` order either way.
pub fn pair_entities(n_entities: usize, max_pairs: Option<usize>, entity_scores: &[f64]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n_entities)
        .flat_map(|i| (0..n_entities).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    if let Some(limit) = max_pairs {
        if limit < pairs.len() {
            let score = |&(i, j): &(usize, usize)| {
                entity_scores.get(i).copied().unwrap_or(1.0) * entity_scores.get(j).copied().unwrap_or(1.0)
            };
            pairs.sort_by(|a, b| score(b).total_cmp(&score(a)).then(a.cmp(b)));
            pairs.truncate(limit);
            pairs.sort_unstable();
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_full_image() {
        let g = geometry_encode(&BBox::new(0.0, 0.0, 100.0, 100.0), 100.0, 100.0).unwrap();
        assert_eq!(g, [0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn geometry_centered_box() {
        let g = geometry_encode(&BBox::new(25.0, 25.0, 75.0, 75.0), 100.0, 100.0).unwrap();
        assert_eq!(g, [0.25, 0.25, 0.75, 0.75, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn geometry_rejects_empty_image() {
        assert!(geometry_encode(&BBox::new(0.0, 0.0, 1.0, 1.0), 0.0, 100.0).is_err());
        assert!(geometry_encode(&BBox::new(5.0, 0.0, 1.0, 1.0), 10.0, 10.0).is_err());
    }

    #[test]
    fn pairs_small() {
        assert_eq!(pair_entities(2, None, &[]), vec![(0, 1), (1, 0)]);
        let p = pair_entities(3, None, &[]);
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|(i, j)| i != j));
        assert!(pair_entities(1, None, &[]).is_empty());
    }

    #[test]
    fn pairs_pruned_matches_sort_oracle() {
        let scores = [0.9, 0.5, 0.9, 0.2];
        let got = pair_entities(4, Some(5), &scores);
        assert_eq!(got, pair_entities(4, Some(5), &scores));
        // oracle: enumerate every pair, rank by (-score, pair)
        let mut all = vec![];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    all.push(((scores[i] * scores[j] * 1e12).round() as i64, i, j));
                }
            }
        }
        all.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut want: Vec<_> = all[..5].iter().map(|t| (t.1, t.2)).collect();
        want.sort();
        assert_eq!(got, want);
        // (0,2),(2,0) lead; then the 0.45 ties (0,1),(1,0),(1,2) beat (2,1)
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0)]);
    }
}
