//! JSON dataset manifest.
//!
//! ```json
//! {
//!   "classes_entity": ["person", ...],
//!   "classes_predicate": ["on", ...],
//!   "meta": { "group_cuts": [10000, 500], "predicate_groups": ["head", ...], "predicate_counts": [..] },
//!   "images": [{
//!     "image_id": 0, "width": 640.0, "height": 480.0, "split": "train",
//!     "entities": [{"box": [x1, y1, x2, y2], "detected_class": 3,
//!                   "class_simplex": [...], "feature": [...]}],
//!     "gt_entity_classes": [3, ...],
//!     "gt_triplets": [[subj, pred, obj], ...],
//!     "union_features": [{"pair": [i, j], "feature": [...]}],
//!     "detections": { "entities": [...], "union_features": [...] }
//!   }]
//! }
//! ```
//!
//! `meta` and `detections` are optional. `entities` are aligned with the
//! ground-truth objects; `detections` carries the raw detector output used
//! for SGGen evaluation.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::eval::Group;

use super::BBox;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One detected (or ground-truth-aligned) object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityProposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub detected_class: usize,
    pub class_simplex: Vec<f64>,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnionFeature {
    pub pair: [usize; 2],
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSet {
    pub entities: Vec<EntityProposal>,
    #[serde(default)]
    pub union_features: Vec<UnionFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub split: Split,
    pub entities: Vec<EntityProposal>,
    pub gt_entity_classes: Vec<usize>,
    pub gt_triplets: Vec<[usize; 3]>,
    #[serde(default)]
    pub union_features: Vec<UnionFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<ProposalSet>,
}

impl ImageRecord {
    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.entities.iter().map(|e| e.bbox).collect()
    }

    /// Ground-truth entity proposals as a [`ProposalSet`].
    pub fn gt_proposals(&self) -> ProposalSet {
        ProposalSet { entities: self.entities.clone(), union_features: self.union_features.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    /// `[head_above, tail_below]` instance-count cuts.
    pub group_cuts: [u64; 2],
    pub predicate_groups: Vec<Group>,
    pub predicate_counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes_entity: Vec<String>,
    pub classes_predicate: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ManifestMeta>,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn num_entity_classes(&self) -> usize {
        self.classes_entity.len()
    }

    pub fn num_predicate_classes(&self) -> usize {
        self.classes_predicate.len()
    }

    /// Visual feature dimension, taken from the first entity.
    pub fn feature_dim(&self) -> Option<usize> {
        self.images.iter().flat_map(|im| im.entities.first()).map(|e| e.feature.len()).next()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |im| im.split == split)
    }

    /// A copy holding only the images of one split.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            classes_entity: self.classes_entity.clone(),
            classes_predicate: self.classes_predicate.clone(),
            meta: self.meta.clone(),
            images: self.split(split).cloned().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ne = self.num_entity_classes();
        let np = self.num_predicate_classes();
        ensure!(ne > 0 && np > 0, Contract, "manifest has empty class vocabularies");
        let dim = self.feature_dim();
        for im in &self.images {
            let id = im.image_id;
            ensure!(im.width > 0.0 && im.height > 0.0, Domain, "image {id}: non-positive extent");
            ensure!(
                im.gt_entity_classes.len() == im.entities.len(),
                Contract,
                "image {id}: {} gt classes for {} entities",
                im.gt_entity_classes.len(),
                im.entities.len()
            );
            for &c in &im.gt_entity_classes {
                ensure!(c < ne, Index, "image {id}: entity class {c} >= {ne}");
            }
            validate_proposals(id, &im.entities, &im.union_features, ne, dim)?;
            if let Some(det) = &im.detections {
                validate_proposals(id, &det.entities, &det.union_features, ne, dim)?;
            }
            let n = im.entities.len();
            for t in &im.gt_triplets {
                ensure!(t[0] < n && t[2] < n, Index, "image {id}: triplet {t:?} references missing entity");
                ensure!(t[0] != t[2], Contract, "image {id}: self-relation {t:?}");
                ensure!(t[1] < np, Index, "image {id}: predicate class {} >= {np}", t[1]);
            }
        }
        if let Some(meta) = &self.meta {
            ensure!(
                meta.predicate_groups.len() == np,
                Contract,
                "meta lists {} predicate groups for {np} classes",
                meta.predicate_groups.len()
            );
        }
        Ok(())
    }
}

fn validate_proposals(id: u64, ents: &[EntityProposal], unions: &[UnionFeature], ne: usize, dim: Option<usize>) -> Result<()> {
    for e in ents {
        e.bbox.validate()?;
        ensure!(e.class_simplex.len() == ne, Dimension, "image {id}: simplex over {} classes", e.class_simplex.len());
        ensure!(e.detected_class < ne, Index, "image {id}: detected class {} >= {ne}", e.detected_class);
        let sum: f64 = e.class_simplex.iter().sum();
        ensure!(
            e.class_simplex.iter().all(|p| *p >= 0.0) && (sum - 1.0).abs() <= 1e-6,
            Domain,
            "image {id}: class simplex sums to {sum}"
        );
        if let Some(d) = dim {
            ensure!(e.feature.len() == d, Dimension, "image {id}: feature dim {} != {d}", e.feature.len());
        }
    }
    let mut seen = HashSet::new();
    for u in unions {
        let [i, j] = u.pair;
        ensure!(i < ents.len() && j < ents.len() && i != j, Index, "image {id}: bad union pair {:?}", u.pair);
        ensure!(seen.insert(u.pair), Contract, "image {id}: duplicate union pair {:?}", u.pair);
        if let Some(d) = dim {
            ensure!(u.feature.len() == d, Dimension, "image {id}: union feature dim {} != {d}", u.feature.len());
        }
    }
    Ok(())
}

/// Union feature for an ordered pair, falling back to the mean of the two
/// entity features when the manifest does not provide one.
pub fn union_feature(set: &ProposalSet, i: usize, j: usize) -> Vec<f64> {
    if let Some(u) = set.union_features.iter().find(|u| u.pair == [i, j]) {
        return u.feature.clone();
    }
    let (a, b) = (&set.entities[i].feature, &set.entities[j].feature);
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}
