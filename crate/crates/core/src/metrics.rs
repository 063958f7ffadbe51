//! Impression-level ranking metrics and their aggregate report.
//!
//! Rankings sort by descending score with ties broken by candidate index.
//! MRR averages the reciprocal ranks of all positives in an impression.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImpression {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredImpression {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("scored impression", &[scores.len()], &[labels.len()]));
        }
        Ok(Self { scores, labels })
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Candidate indices, best first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| descending(self.scores[a], self.scores[b]).then(a.cmp(&b)));
        idx
    }
}

/// Descending order where equal scores (including `0.0` and `-0.0`) tie.
fn descending(a: f64, b: f64) -> std::cmp::Ordering {
    if a == b {
        std::cmp::Ordering::Equal
    } else {
        b.total_cmp(&a)
    }
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. `None` unless both classes are present.
pub fn auc(s: &ScoredImpression) -> Option<f64> {
    let pos = s.positives();
    let neg = s.labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // average ranks over tied groups, then the Mann-Whitney statistic
    let mut idx: Vec<usize> = (0..s.scores.len()).collect();
    idx.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s.scores[idx[j + 1]] == s.scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if s.labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mrr(s: &ScoredImpression) -> Option<f64> {
    let pos = s.positives();
    if pos == 0 {
        return None;
    }
    let total: f64 = s
        .ranking()
        .iter()
        .enumerate()
        .filter(|(_, &k)| s.labels[k] == 1)
        .map(|(r, _)| 1.0 / (r + 1) as f64)
        .sum();
    Some(total / pos as f64)
}

/// Binary-gain nDCG at cutoff `k`.
pub fn ndcg_at(s: &ScoredImpression, k: usize) -> Option<f64> {
    let pos = s.positives();
    if pos == 0 {
        return None;
    }
    let disc = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = s
        .ranking()
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &c)| s.labels[c] == 1)
        .map(|(r, _)| disc(r))
        .sum();
    let ideal: f64 = (0..pos.min(k)).map(disc).sum();
    Some(dcg / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub auc: Summary,
    pub mrr: Summary,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: Summary,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: Summary,
    pub impressions: usize,
    /// Impressions without both classes; no AUC.
    pub excluded_auc: usize,
    /// Impressions without a positive; no MRR or nDCG.
    pub excluded_no_positive: usize,
    /// Impressions the model could not score (no resolvable history).
    pub excluded_empty_history: usize,
}

/// Per-impression metrics, averaged.
pub fn evaluate(scored: &[ScoredImpression]) -> MetricReport {
    let per: Vec<[Option<f64>; 4]> = scored
        .par_iter()
        .map(|s| [auc(s), mrr(s), ndcg_at(s, 5), ndcg_at(s, 10)])
        .collect();
    let col = |j: usize| -> Vec<f64> { per.iter().filter_map(|r| r[j]).collect() };
    let aucs = col(0);
    let mrrs = col(1);
    MetricReport {
        auc: Summary::of(&aucs),
        mrr: Summary::of(&mrrs),
        ndcg5: Summary::of(&col(2)),
        ndcg10: Summary::of(&col(3)),
        impressions: scored.len(),
        excluded_auc: scored.len() - aucs.len(),
        excluded_no_positive: scored.len() - mrrs.len(),
        excluded_empty_history: 0,
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>8} {:>7}\n", "metric", "mean", "std", "n");
        for (name, m) in [
            ("AUC", self.auc),
            ("MRR", self.mrr),
            ("nDCG@5", self.ndcg5),
            ("nDCG@10", self.ndcg10),
        ] {
            let _ = writeln!(s, "{:<8} {:>8.4} {:>8.4} {:>7}", name, m.mean, m.std, m.n);
        }
        let _ = writeln!(
            s,
            "impressions {}, excluded from AUC {}, without positives {}, empty history {}",
            self.impressions, self.excluded_auc, self.excluded_no_positive, self.excluded_empty_history
        );
        s
    }
}
