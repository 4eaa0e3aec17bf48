//! Instance-matching metrics: per-ground-truth best IoU, average recall over
//! an IoU threshold sweep, and positive/negative similarity histograms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::ProposalSet;
use crate::embedding::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::loss::InstanceLabeling;

/// Standard AR threshold grid: 0.50, 0.55, ..., 0.95.
pub fn standard_ar_thresholds() -> Vec<f64> {
    (10..20).map(|i| i as f64 / 20.0).collect()
}

/// Per-ground-truth best IoU plus a greedy one-to-one matching.
#[derive(Debug, Clone)]
pub struct IouMatchResult {
    pub per_gt_best_iou: Vec<f64>,
    pub mean_best_iou: f64,
    /// For each ground-truth instance, the index of its matched prediction
    /// under greedy one-to-one matching, or `None`.
    pub matched_pred: Vec<Option<usize>>,
    /// Ground-truth ids in the order the vectors above use.
    pub gt_ids: Vec<u32>,
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.iter().zip(b) {
        if *x && *y {
            inter += 1;
        }
        if *x || *y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn gt_masks(gt: &InstanceLabeling, ignore_background: bool) -> (Vec<u32>, Vec<Vec<bool>>) {
    let ids: Vec<u32> = gt
        .ids()
        .filter(|id| !(ignore_background && *id == 0))
        .collect();
    let masks = ids
        .iter()
        .map(|id| gt.labels().iter().map(|l| l == id).collect())
        .collect();
    (ids, masks)
}

/// All-pairs IoU, then for each ground-truth instance its best IoU against
/// any prediction and a greedy one-to-one match in descending IoU order.
pub fn best_iou(
    pred: &ProposalSet,
    gt: &InstanceLabeling,
    ignore_background: bool,
) -> Result<IouMatchResult> {
    if let Some(mask) = pred.masks.first() {
        if mask.len() != gt.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", gt.len()),
                got: format!("{}", mask.len()),
            });
        }
    }
    let (gt_ids, gts) = gt_masks(gt, ignore_background);
    let table: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| pred.masks.iter().map(|p| iou(g, p)).collect())
        .collect();
    let per_gt_best_iou: Vec<f64> = table
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();
    let mean_best_iou = if per_gt_best_iou.is_empty() {
        0.0
    } else {
        per_gt_best_iou.iter().sum::<f64>() / per_gt_best_iou.len() as f64
    };

    // Greedy one-to-one: highest IoU pairs first, each prediction matches at
    // most one ground truth.
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (g, row) in table.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            if v > 0.0 {
                pairs.push((g, p, v));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut matched_pred = vec![None; gts.len()];
    let mut used_pred = vec![false; pred.len()];
    for (g, p, _) in pairs {
        if matched_pred[g].is_none() && !used_pred[p] {
            matched_pred[g] = Some(p);
            used_pred[p] = true;
        }
    }
    Ok(IouMatchResult {
        per_gt_best_iou,
        mean_best_iou,
        matched_pred,
        gt_ids,
    })
}

/// Mean over thresholds of the recall under one-to-one matching at that
/// threshold. Background id 0 is excluded from the ground truth.
pub fn average_recall(pred: &ProposalSet, gt: &InstanceLabeling, thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("thresholds must be nonempty".into()));
    }
    if thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::InvalidConfig("thresholds must lie in (0, 1]".into()));
    }
    let (_, gts) = gt_masks(gt, true);
    if gts.is_empty() {
        return Err(Error::InvalidLabeling("no foreground instances".into()));
    }
    let table: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| pred.masks.iter().map(|p| iou(g, p)).collect())
        .collect();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (g, row) in table.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            pairs.push((g, p, v));
        }
    }
    pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut total = 0.0;
    for &t in thresholds {
        let mut matched_gt = vec![false; gts.len()];
        let mut used_pred = vec![false; pred.len()];
        let mut hits = 0usize;
        for &(g, p, v) in &pairs {
            if v >= t && !matched_gt[g] && !used_pred[p] {
                matched_gt[g] = true;
                used_pred[p] = true;
                hits += 1;
            }
        }
        total += hits as f64 / gts.len() as f64;
    }
    Ok(total / thresholds.len() as f64)
}

/// Histogram of calibrated similarities split into positive and negative
/// pairs.
#[derive(Debug, Clone)]
pub struct SimilarityHistogram {
    pub bin_edges: Vec<f64>,
    pub positive_counts: Vec<usize>,
    pub negative_counts: Vec<usize>,
}

impl SimilarityHistogram {
    pub fn num_positive(&self) -> usize {
        self.positive_counts.iter().sum()
    }

    pub fn num_negative(&self) -> usize {
        self.negative_counts.iter().sum()
    }

    /// Fraction of positive pairs whose similarity landed at or above `lo`.
    pub fn positive_mass_above(&self, lo: f64) -> f64 {
        let total = self.num_positive();
        if total == 0 {
            return 0.0;
        }
        let mass: usize = self
            .bin_edges
            .windows(2)
            .zip(&self.positive_counts)
            .filter(|(edge, _)| edge[0] >= lo - 1e-12)
            .map(|(_, c)| *c)
            .sum();
        mass as f64 / total as f64
    }
}

/// Samples up to `max_pairs` unordered pairs of each kind uniformly and bins
/// their similarities over `[0, 1]`.
pub fn similarity_histogram(
    s: &SimilarityMatrix,
    labels: &InstanceLabeling,
    bins: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<SimilarityHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig("bins must be >= 2".into()));
    }
    let n = s.num_points();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if labels.label(i) == labels.label(j) {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    positives.truncate(max_pairs);
    negatives.truncate(max_pairs);

    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut positive_counts = vec![0usize; bins];
    let mut negative_counts = vec![0usize; bins];
    let bin_of = |v: f64| -> usize {
        let clamped = v.clamp(0.0, 1.0);
        ((clamped * bins as f64) as usize).min(bins - 1)
    };
    for (i, j) in positives {
        positive_counts[bin_of(s.get(i, j))] += 1;
    }
    for (i, j) in negatives {
        negative_counts[bin_of(s.get(i, j))] += 1;
    }
    Ok(SimilarityHistogram {
        bin_edges,
        positive_counts,
        negative_counts,
    })
}
