//! Weighted pairwise max-margin loss on calibrated similarities, with
//! instance-aware pixel weighting, pixel subsampling, and the analytic
//! margin-bound calculators.
//!
//! The loss over a sampled subset is
//! `sum_{i,j} (w_i w_j / divisor) [ 1{y_i=y_j}(1 - s_ij) + 1{y_i!=y_j} max(s_ij - a, 0) ]`
//! where the divisor is either the full pixel count or the subset size.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{EmbeddingMatrix, GradientBuffer, SimilarityMatrix};
use crate::error::{Error, Result};

/// Per-pixel instance ids with derived per-instance sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabeling {
    labels: Vec<u32>,
    instance_sizes: BTreeMap<u32, usize>,
}

impl InstanceLabeling {
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidLabeling("empty label array".into()));
        }
        let mut instance_sizes = BTreeMap::new();
        for &l in &labels {
            *instance_sizes.entry(l).or_insert(0) += 1;
        }
        Ok(Self {
            labels,
            instance_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn num_instances(&self) -> usize {
        self.instance_sizes.len()
    }

    pub fn instance_sizes(&self) -> &BTreeMap<u32, usize> {
        &self.instance_sizes
    }

    /// Distinct instance ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.instance_sizes.keys().copied()
    }
}

/// Positive per-pixel loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights {
    w: Vec<f64>,
}

impl PixelWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("pixel weights must be positive".into()));
        }
        Ok(Self { w })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Which count divides the pair double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by the full pixel count N of the image.
    PerImageN,
    /// Divide by the sampled subset size (default for training).
    PerSampleS,
}

/// Margin, sampling, and normalization settings for the pair loss.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub alpha: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub normalization: Normalization,
}

impl LossConfig {
    pub fn new(alpha: f64, sample_size: usize, seed: u64, normalization: Normalization) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidMargin(alpha));
        }
        if sample_size < 2 {
            return Err(Error::InvalidConfig("sample_size must be >= 2".into()));
        }
        Ok(Self {
            alpha,
            sample_size,
            seed,
            normalization,
        })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            sample_size: 1024,
            seed: 0,
            normalization: Normalization::PerSampleS,
        }
    }
}

/// Loss value, its positive/negative split, and the gradient w.r.t. the
/// similarity matrix.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub positive_term: f64,
    pub negative_term: f64,
    pub grad_s: GradientBuffer,
    pub sampled_indices: Vec<usize>,
}

/// `w_i = 1 / |I_q|` so every instance contributes equally to the loss.
pub fn instance_weights(labels: &InstanceLabeling) -> PixelWeights {
    let w = labels
        .labels()
        .iter()
        .map(|l| 1.0 / labels.instance_sizes()[l] as f64)
        .collect();
    PixelWeights { w }
}

/// Draws `min(sample_size, N)` distinct pixel indices uniformly without
/// replacement, deterministically for a fixed seed. Output is sorted.
pub fn sample_pixels(labels: &InstanceLabeling, config: &LossConfig) -> Vec<usize> {
    let n = labels.len();
    let s = config.sample_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

/// Weighted pairwise max-margin loss over the sampled subset.
///
/// Self-pairs are included (they contribute zero since `s_ii = 1`). At the
/// hinge kink `s_ij = alpha` exactly the subgradient 0 is used.
pub fn pair_loss(
    s_sim: &SimilarityMatrix,
    labels: &InstanceLabeling,
    weights: &PixelWeights,
    config: &LossConfig,
    subset: &[usize],
) -> Result<LossResult> {
    let n = s_sim.num_points();
    if labels.len() != n || weights.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels/weights"),
            got: format!("{} labels, {} weights", labels.len(), weights.len()),
        });
    }
    for &i in subset {
        if i >= n {
            return Err(Error::InvalidSubset { index: i, len: n });
        }
    }
    let divisor = match config.normalization {
        Normalization::PerImageN => n as f64,
        Normalization::PerSampleS => subset.len() as f64,
    };

    let mut positive = 0.0;
    let mut negative = 0.0;
    let mut grad_s: GradientBuffer = Array2::zeros((n, n));
    for &i in subset {
        for &j in subset {
            let scale = weights.get(i) * weights.get(j) / divisor;
            if labels.label(i) == labels.label(j) {
                positive += scale * (1.0 - s_sim.get(i, j));
                grad_s[[i, j]] -= scale;
            } else {
                let violation = s_sim.get(i, j) - config.alpha;
                if violation > 0.0 {
                    negative += scale * violation;
                    grad_s[[i, j]] += scale;
                }
            }
        }
    }
    Ok(LossResult {
        value: positive + negative,
        positive_term: positive,
        negative_term: negative,
        grad_s,
        sampled_indices: subset.to_vec(),
    })
}

/// Smallest admissible margin for `n` groups on the 2-sphere:
/// `1 - 2*pi / (sqrt(3) * n)`.
pub fn margin_lower_bound(n: usize) -> f64 {
    1.0 - 2.0 * std::f64::consts::PI / (3.0f64.sqrt() * n as f64)
}

/// Margin above which an embedding with zero hinge loss exists:
/// `1 - ((8*pi/(sqrt(3) n))^(1/2) - C n^(-2/3))^2 / 4`.
pub fn margin_upper_bound(n: usize, c: f64) -> Result<f64> {
    let root = (8.0 * std::f64::consts::PI / (3.0f64.sqrt() * n as f64)).sqrt();
    let t = root - c * (n as f64).powf(-2.0 / 3.0);
    if t < 0.0 {
        return Err(Error::VacuousBound { n, c });
    }
    Ok(1.0 - 0.25 * t * t)
}

/// Checks the lower bound on total pairwise similarity:
/// `sum_{i != j} x_i'x_j >= -N` for unit vectors.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityBoundCheck {
    pub lhs: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn check_total_similarity_bound(x: &EmbeddingMatrix) -> SimilarityBoundCheck {
    let n = x.num_points();
    // sum_{i != j} x_i'x_j = |sum_i x_i|^2 - sum_i |x_i|^2, but compute the
    // Gram sum directly so the check is independent of that identity.
    let gram = x.data().t().dot(x.data());
    let mut lhs = gram.sum();
    for i in 0..n {
        lhs -= gram[[i, i]];
    }
    let bound = -(n as f64);
    SimilarityBoundCheck {
        lhs,
        bound,
        holds: lhs >= bound - 1e-9,
    }
}
