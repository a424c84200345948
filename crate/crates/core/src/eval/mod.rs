//! Scene graph evaluation: triplet matching, R@K / mR@K with head/body/tail
//! groups, box-matched weighted mAP, the weighted Open Images score and AUC
//! for relationship confidence.

mod matching;
mod recall;
mod report;
mod wmap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::proposals::BBox;

pub use matching::{match_triplets, EvalMode, GroundTruth, ImagePrediction, PairConfidence, RankedTriplet};
pub use recall::{mean_recall_at_k, recall_at_k, RecallAccumulator};
pub use report::{GroupRecall, MetricsReport};
pub use wmap::{average_precision, wmap, WmapVariant};

/// Predicate class frequency group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Head,
    Body,
    Tail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupPartition {
    pub groups: Vec<Group>,
    pub head_above: u64,
    pub tail_below: u64,
}

impl GroupPartition {
    pub fn classes(&self, g: Group) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().enumerate().filter(move |(_, x)| **x == g).map(|(c, _)| c)
    }
}

/// Default cuts: head above 10k training instances, tail below 500.
pub const DEFAULT_GROUP_CUTS: (u64, u64) = (10_000, 500);

/// `count > head_above` is head, `count < tail_below` is tail, everything
/// else (including both boundaries) is body.
pub fn partition_groups(train_counts: &[u64], (head_above, tail_below): (u64, u64)) -> GroupPartition {
    let groups = train_counts
        .iter()
        .map(|&c| {
            if c > head_above {
                Group::Head
            } else if c < tail_below {
                Group::Tail
            } else {
                Group::Body
            }
        })
        .collect();
    GroupPartition { groups, head_above, tail_below }
}

/// Intersection over union in continuous coordinates.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `0.2·R@50 + 0.4·wmAP_rel + 0.4·wmAP_phr`, all on the same scale.
pub fn score_wtd(r50: f64, wmap_rel: f64, wmap_phr: f64) -> f64 {
    0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr
}

/// Area under the ROC curve via the Mann–Whitney statistic; tied
/// positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    ensure!(scores.len() == labels.len(), Dimension, "{} scores for {} labels", scores.len(), labels.len());
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    ensure!(n_pos > 0 && n_neg > 0, Contract, "AUC needs both classes ({n_pos} positive, {n_neg} negative)");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Default recall cut-offs.
pub const DEFAULT_KS: [usize; 3] = [20, 50, 100];

/// Whether a predicted pair localizes some annotated relationship.
fn pair_is_related(pred: &ImagePrediction, gt: &GroundTruth, pair: [usize; 2], mode: EvalMode, iou_thresh: f64) -> bool {
    gt.triplets.iter().any(|g| match mode {
        EvalMode::PredCls | EvalMode::SgCls => pair == [g[0], g[2]],
        EvalMode::SgGen => match (pred.entity_boxes.get(pair[0]), pred.entity_boxes.get(pair[1])) {
            (Some(s), Some(o)) => iou(s, &gt.boxes[g[0]]) >= iou_thresh && iou(o, &gt.boxes[g[2]]) >= iou_thresh,
            _ => false,
        },
    })
}

/// Full metrics for one evaluation run.
pub fn compute_report(
    images: &[(ImagePrediction, GroundTruth)],
    mode: EvalMode,
    num_classes: usize,
    partition: &GroupPartition,
    ks: &[usize],
    iou_thresh: f64,
) -> Result<MetricsReport> {
    ensure!(
        partition.groups.len() == num_classes,
        Dimension,
        "partition covers {} classes, expected {num_classes}",
        partition.groups.len()
    );
    let mut acc = RecallAccumulator::new(ks, num_classes)?;
    let (mut rce, mut base, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (pred, gt) in images {
        let matches = match_triplets(pred, gt, mode, iou_thresh);
        let classes: Vec<usize> = gt.triplets.iter().map(|t| t[1]).collect();
        acc.add_image(&classes, &matches)?;
        for pc in &pred.pair_confidence {
            rce.push(pc.rce);
            base.push(pc.baseline);
            labels.push(pair_is_related(pred, gt, pc.pair, mode, iou_thresh));
        }
    }
    let per_class = acc.per_class();
    let group_mean = |g: Group| -> Vec<Option<f64>> {
        per_class
            .iter()
            .map(|row| {
                let vals: Vec<Option<f64>> = partition.classes(g).map(|c| row[c]).collect();
                mean_recall_at_k(&vals)
            })
            .collect()
    };
    let refs: Vec<(&ImagePrediction, &GroundTruth)> = images.iter().map(|(p, g)| (p, g)).collect();
    let wmap_rel = wmap(&refs, num_classes, WmapVariant::Rel);
    let wmap_phr = wmap(&refs, num_classes, WmapVariant::Phr);
    let recall = acc.recall();
    let r50 = ks.iter().position(|k| *k == 50).map_or(0.0, |i| recall[i]);
    let both = labels.iter().any(|l| *l) && labels.iter().any(|l| !*l);
    Ok(MetricsReport {
        mode,
        num_images: acc.num_images(),
        ks: ks.to_vec(),
        mean_recall: acc.mean_recall(),
        recall,
        group_mean_recall: GroupRecall { head: group_mean(Group::Head), body: group_mean(Group::Body), tail: group_mean(Group::Tail) },
        per_class_recall: per_class,
        wmap_rel,
        wmap_phr,
        score_wtd: score_wtd(100.0 * r50, 100.0 * wmap_rel, 100.0 * wmap_phr),
        auc_rce: if both { Some(auc(&rce, &labels)?) } else { None },
        auc_baseline: if both { Some(auc(&base, &labels)?) } else { None },
    })
}

/// Relatedness baseline: product of the two entities' top class scores.
pub fn entity_score_product_baseline(p_i: &[f64], p_j: &[f64]) -> f64 {
    let top = |p: &[f64]| p.iter().copied().fold(0.0, f64::max);
    top(p_i) * top(p_j)
}
