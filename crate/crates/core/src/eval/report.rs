use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalMode, Group};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    /// Mean recall per K over the group's classes present in the split.
    pub head: Vec<Option<f64>>,
    pub body: Vec<Option<f64>>,
    pub tail: Vec<Option<f64>>,
}

impl GroupRecall {
    pub fn get(&self, g: Group) -> &[Option<f64>] {
        match g {
            Group::Head => &self.head,
            Group::Body => &self.body,
            Group::Tail => &self.tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub num_images: usize,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub mean_recall: Vec<f64>,
    pub group_mean_recall: GroupRecall,
    /// `[k][class]`
    pub per_class_recall: Vec<Vec<Option<f64>>>,
    pub wmap_rel: f64,
    pub wmap_phr: f64,
    /// On the percentage scale.
    pub score_wtd: f64,
    pub auc_rce: Option<f64>,
    pub auc_baseline: Option<f64>,
}

impl MetricsReport {
    fn k_index(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|x| *x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.k_index(k).map(|i| self.recall[i])
    }

    pub fn mean_recall_at(&self, k: usize) -> Option<f64> {
        self.k_index(k).map(|i| self.mean_recall[i])
    }

    pub fn group_recall_at(&self, g: Group, k: usize) -> Option<f64> {
        self.k_index(k).and_then(|i| self.group_mean_recall.get(g)[i])
    }

    /// Plain-text table, percentages with two decimals.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "     -".to_string(), pct);
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}   images: {}", self.mode, self.num_images);
        let _ = writeln!(s, "{:>6} {:>7} {:>7} {:>7} {:>7} {:>7}", "K", "R@K", "mR@K", "head", "body", "tail");
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>6} {:>7} {:>7} {:>7} {:>7} {:>7}",
                k,
                pct(self.recall[i]),
                pct(self.mean_recall[i]),
                opt(self.group_mean_recall.head[i]),
                opt(self.group_mean_recall.body[i]),
                opt(self.group_mean_recall.tail[i]),
            );
        }
        let _ = writeln!(s, "wmAP_rel {}  wmAP_phr {}  score_wtd {:6.2}", pct(self.wmap_rel), pct(self.wmap_phr), self.score_wtd);
        if let (Some(a), Some(b)) = (self.auc_rce, self.auc_baseline) {
            let _ = writeln!(s, "AUC rce {a:.4}  entity-score baseline {b:.4}");
        }
        s
    }
}
