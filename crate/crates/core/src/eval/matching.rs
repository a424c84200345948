use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::proposals::BBox;

use super::iou;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Ground-truth boxes and labels are given.
    PredCls,
    /// Ground-truth boxes, predicted labels.
    SgCls,
    /// Detector boxes and labels; localization matched by IoU.
    SgGen,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "predcls" => Ok(EvalMode::PredCls),
            "sgcls" => Ok(EvalMode::SgCls),
            "sggen" | "sgdet" => Ok(EvalMode::SgGen),
            other => Err(Error::Config(format!("unknown eval mode {other}"))),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::PredCls => "predcls",
            EvalMode::SgCls => "sgcls",
            EvalMode::SgGen => "sggen",
        })
    }
}

/// `(subject, predicate, object, score)`; indices refer to the predicted
/// entity list. Serialized as `[i, pred, j, score]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize, f64)", into = "(usize, usize, usize, f64)")]
pub struct RankedTriplet {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
    pub score: f64,
}

impl From<(usize, usize, usize, f64)> for RankedTriplet {
    fn from((subject, predicate, object, score): (usize, usize, usize, f64)) -> Self {
        Self { subject, predicate, object, score }
    }
}

impl From<RankedTriplet> for (usize, usize, usize, f64) {
    fn from(t: RankedTriplet) -> Self {
        (t.subject, t.predicate, t.object, t.score)
    }
}

/// One image of the prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePrediction {
    pub image_id: u64,
    /// Sorted by descending score.
    pub triplets: Vec<RankedTriplet>,
    #[serde(default)]
    pub entity_labels: Vec<usize>,
    #[serde(default)]
    pub entity_boxes: Vec<BBox>,
    /// Relationship confidence per scored pair, for AUC.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_confidence: Vec<PairConfidence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfidence {
    pub pair: [usize; 2],
    pub rce: f64,
    pub baseline: f64,
}

/// Annotations of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub triplets: Vec<[usize; 3]>,
    pub entity_classes: Vec<usize>,
    pub boxes: Vec<BBox>,
}

fn localization(pred: &ImagePrediction, gt: &GroundTruth, t: &RankedTriplet, g: &[usize; 3], mode: EvalMode, iou_thresh: f64) -> Option<f64> {
    match mode {
        EvalMode::PredCls | EvalMode::SgCls => (t.subject == g[0] && t.object == g[2]).then_some(1.0),
        EvalMode::SgGen => {
            let (ps, po) = (pred.entity_boxes.get(t.subject)?, pred.entity_boxes.get(t.object)?);
            let s = iou(ps, &gt.boxes[g[0]]);
            let o = iou(po, &gt.boxes[g[2]]);
            (s >= iou_thresh && o >= iou_thresh).then_some(s.min(o))
        }
    }
}

fn labels_agree(pred: &ImagePrediction, gt: &GroundTruth, t: &RankedTriplet, g: &[usize; 3], mode: EvalMode) -> bool {
    if t.predicate != g[1] {
        return false;
    }
    if mode == EvalMode::PredCls {
        return true;
    }
    let label = |i: usize| pred.entity_labels.get(i).copied();
    label(t.subject) == Some(gt.entity_classes[g[0]]) && label(t.object) == Some(gt.entity_classes[g[2]])
}

/// Greedy one-to-one matching in rank order. Returns, for each ground-truth
/// triplet, the rank of the prediction that claimed it. A GT is recalled at
/// K iff its rank is `< K`; greedy matching is prefix-consistent, so one
/// pass serves every K.
///
/// When several unmatched GTs fit a prediction, the one with the best
/// localization wins, then the smallest `(subject class, predicate,
/// object class, box)` key, so the result does not depend on the order of
/// the GT list.
pub fn match_triplets(pred: &ImagePrediction, gt: &GroundTruth, mode: EvalMode, iou_thresh: f64) -> Vec<Option<usize>> {
    let mut claimed: Vec<Option<usize>> = vec![None; gt.triplets.len()];
    for (rank, t) in pred.triplets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.triplets.iter().enumerate() {
            if claimed[gi].is_some() || !labels_agree(pred, gt, t, g, mode) {
                continue;
            }
            let Some(quality) = localization(pred, gt, t, g, mode, iou_thresh) else { continue };
            let better = match best {
                None => true,
                Some((bi, bq)) => match quality.total_cmp(&bq) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => gt_key(gt, gi) < gt_key(gt, bi),
                },
            };
            if better {
                best = Some((gi, quality));
            }
        }
        if let Some((gi, _)) = best {
            claimed[gi] = Some(rank);
        }
    }
    claimed
}

fn gt_key(gt: &GroundTruth, gi: usize) -> (usize, usize, usize, [u64; 8]) {
    let g = gt.triplets[gi];
    let bits = |b: &BBox| [b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()];
    let (s, o) = (bits(&gt.boxes[g[0]]), bits(&gt.boxes[g[2]]));
    (
        gt.entity_classes[g[0]],
        g[1],
        gt.entity_classes[g[2]],
        [s[0], s[1], s[2], s[3], o[0], o[1], o[2], o[3]],
    )
}
