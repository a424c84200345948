use serde::{Deserialize, Serialize};

use crate::proposals::BBox;

use super::{iou, GroundTruth, ImagePrediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WmapVariant {
    /// Subject and object boxes each at IoU >= 0.5.
    Rel,
    /// Enclosing subject∪object box at IoU >= 0.5.
    Phr,
}

const IOU_THRESH: f64 = 0.5;

/// Area under the monotone precision envelope of a ranked list of hits,
/// given the number of positives. Zero when there are no positives.
pub fn average_precision(hits: &[bool], n_positive: usize) -> f64 {
    if n_positive == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_positive as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

fn localized(variant: WmapVariant, ps: &BBox, po: &BBox, gs: &BBox, go: &BBox) -> bool {
    match variant {
        WmapVariant::Rel => iou(ps, gs) >= IOU_THRESH && iou(po, go) >= IOU_THRESH,
        WmapVariant::Phr => iou(&ps.union(po), &gs.union(go)) >= IOU_THRESH,
    }
}

/// Per-class AP pooled over images, weighted by each class's share of GT
/// instances. Inputs pair each image's predictions with its annotations;
/// predictions must carry entity labels and boxes.
pub fn wmap(images: &[(&ImagePrediction, &GroundTruth)], num_classes: usize, variant: WmapVariant) -> f64 {
    let mut scored: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); num_classes];
    let mut n_gt = vec![0usize; num_classes];
    for (img_idx, (pred, gt)) in images.iter().enumerate() {
        for g in &gt.triplets {
            if g[1] < num_classes {
                n_gt[g[1]] += 1;
            }
        }
        let mut claimed = vec![false; gt.triplets.len()];
        let mut order: Vec<usize> = (0..pred.triplets.len()).collect();
        order.sort_by(|&a, &b| pred.triplets[b].score.total_cmp(&pred.triplets[a].score).then(a.cmp(&b)));
        for rank in order {
            let t = &pred.triplets[rank];
            if t.predicate >= num_classes {
                continue;
            }
            let label = |i: usize| pred.entity_labels.get(i).copied();
            let boxes = (pred.entity_boxes.get(t.subject), pred.entity_boxes.get(t.object));
            let mut hit = false;
            if let (Some(ps), Some(po)) = boxes {
                for (gi, g) in gt.triplets.iter().enumerate() {
                    if claimed[gi]
                        || g[1] != t.predicate
                        || label(t.subject) != Some(gt.entity_classes[g[0]])
                        || label(t.object) != Some(gt.entity_classes[g[2]])
                    {
                        continue;
                    }
                    if localized(variant, ps, po, &gt.boxes[g[0]], &gt.boxes[g[2]]) {
                        claimed[gi] = true;
                        hit = true;
                        break;
                    }
                }
            }
            scored[t.predicate].push((t.score, img_idx, rank, hit));
        }
    }
    let total: usize = n_gt.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut out = 0.0;
    for c in 0..num_classes {
        if n_gt[c] == 0 {
            continue;
        }
        let list = &mut scored[c];
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let hits: Vec<bool> = list.iter().map(|x| x.3).collect();
        out += n_gt[c] as f64 / total as f64 * average_precision(&hits, n_gt[c]);
    }
    out
}
