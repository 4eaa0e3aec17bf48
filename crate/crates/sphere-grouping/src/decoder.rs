//! Converts converged embeddings into a discrete instance partition, and
//! pools proposals from runs at multiple kernel bandwidths.

use ndarray::{Array1, Array2};

use crate::embedding::{normalize_columns, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::gbms::{gbms_step, KernelConfig};

/// Default similarity threshold for joining an existing mode.
pub const DEFAULT_TAU: f64 = 0.95;
/// Masks with IoU at or above this are considered duplicates.
pub const DEDUP_IOU: f64 = 0.95;

/// Discrete pixel-to-instance assignment with unit mode vectors.
#[derive(Debug, Clone)]
pub struct InstancePartition {
    pub assignment: Vec<usize>,
    pub modes: EmbeddingMatrix,
    pub counts: Vec<usize>,
}

impl InstancePartition {
    pub fn num_modes(&self) -> usize {
        self.counts.len()
    }

    /// Binary mask of one instance.
    pub fn mask(&self, mode: usize) -> Vec<bool> {
        self.assignment.iter().map(|a| *a == mode).collect()
    }
}

/// Binary proposal masks with the bandwidth each one came from.
#[derive(Debug, Clone)]
pub struct ProposalSet {
    pub masks: Vec<Vec<bool>>,
    pub source_beta: Vec<f64>,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn from_partition(p: &InstancePartition, beta: f64) -> Self {
        let masks: Vec<Vec<bool>> = (0..p.num_modes()).map(|m| p.mask(m)).collect();
        let source_beta = vec![beta; masks.len()];
        Self { masks, source_beta }
    }
}

fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.iter().zip(b.iter()) {
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

fn calibrated(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    0.5 * (1.0 + a.dot(&b))
}

/// Greedy sequential mode decoding with one refinement pass.
///
/// In pixel order, pixel `i` joins the first existing mode whose calibrated
/// similarity to it is at least `tau`, otherwise it founds a new mode. Mode
/// vectors are then recomputed as the normalized member means, every pixel is
/// re-assigned once to its most similar mode (ties to the lowest index), and
/// empty modes are dropped.
pub fn decode_modes(x: &EmbeddingMatrix, tau: f64) -> Result<InstancePartition> {
    if !(tau > 0.5 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("tau = {tau} must be in (0.5, 1]")));
    }
    let n = x.num_points();
    let dim = x.dim();

    let mut assignment = vec![0usize; n];
    let mut mode_sums: Vec<Array1<f64>> = Vec::new();
    let mut mode_counts: Vec<usize> = Vec::new();
    for i in 0..n {
        let col = x.column(i);
        let mut joined = None;
        for (m, sum) in mode_sums.iter().enumerate() {
            let center = normalize_vec(sum);
            if calibrated(col, center.view()) >= tau {
                joined = Some(m);
                break;
            }
        }
        match joined {
            Some(m) => {
                assignment[i] = m;
                mode_sums[m] = &mode_sums[m] + &col;
                mode_counts[m] += 1;
            }
            None => {
                assignment[i] = mode_sums.len();
                mode_sums.push(col.to_owned());
                mode_counts.push(1);
            }
        }
    }

    // Refinement: recompute modes from members, re-check membership once.
    let centers: Vec<Array1<f64>> = mode_sums.iter().map(normalize_vec).collect();
    for i in 0..n {
        let col = x.column(i);
        let mut best = assignment[i];
        let mut best_sim = calibrated(col, centers[best].view());
        for (m, c) in centers.iter().enumerate() {
            let sim = calibrated(col, c.view());
            // Move only to a mode that clears tau and strictly improves;
            // scanning in order makes ties resolve to the lowest index.
            if sim >= tau && sim > best_sim + 1e-12 {
                best = m;
                best_sim = sim;
            }
        }
        assignment[i] = best;
    }

    // Recompute final modes and drop empties, relabeling compactly.
    let mut counts = vec![0usize; centers.len()];
    for &a in &assignment {
        counts[a] += 1;
    }
    let mut remap = vec![usize::MAX; centers.len()];
    let mut kept = 0usize;
    for (m, &c) in counts.iter().enumerate() {
        if c > 0 {
            remap[m] = kept;
            kept += 1;
        }
    }
    let mut final_sums = vec![Array1::<f64>::zeros(dim); kept];
    let mut final_counts = vec![0usize; kept];
    for (i, a) in assignment.iter_mut().enumerate() {
        *a = remap[*a];
        final_sums[*a] = &final_sums[*a] + &x.column(i);
        final_counts[*a] += 1;
    }
    let mut modes = Array2::zeros((dim, kept));
    for (m, sum) in final_sums.iter().enumerate() {
        modes.column_mut(m).assign(sum);
    }
    let modes = normalize_columns(&modes)?;
    Ok(InstancePartition {
        assignment,
        modes,
        counts: final_counts,
    })
}

fn normalize_vec(v: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt();
    v.mapv(|x| x / norm)
}

/// Runs the grouping at every listed bandwidth, decodes each run, and pools
/// the instance masks, dropping any mask whose IoU with an earlier-kept mask
/// is at least [`DEDUP_IOU`].
pub fn multi_bandwidth_proposals(
    x0: &EmbeddingMatrix,
    betas: &[f64],
    config: &KernelConfig,
    tau: f64,
) -> Result<ProposalSet> {
    if betas.is_empty() {
        return Err(Error::InvalidConfig("betas must be nonempty".into()));
    }
    let mut out = ProposalSet {
        masks: Vec::new(),
        source_beta: Vec::new(),
    };
    for &beta in betas {
        let cfg = KernelConfig::new(beta, config.eta, config.loops)?;
        let mut x = x0.clone();
        for _ in 0..cfg.loops {
            x = gbms_step(&x, &cfg)?.y;
        }
        let partition = decode_modes(&x, tau)?;
        for m in 0..partition.num_modes() {
            let mask = partition.mask(m);
            if mask.iter().any(|&b| b)
                && out.masks.iter().all(|kept| mask_iou(kept, &mask) < DEDUP_IOU)
            {
                out.masks.push(mask);
                out.source_beta.push(beta);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_matrix;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_identical_single_mode() {
        let m = array![[0.6, 0.6, 0.6], [0.8, 0.8, 0.8]];
        let x = EmbeddingMatrix::new(m).unwrap();
        let p = decode_modes(&x, 0.95).unwrap();
        assert_eq!(p.num_modes(), 1);
        assert_eq!(p.counts, vec![3]);
    }

    #[test]
    fn antipodal_clusters_two_modes() {
        let m = array![
            [1.0, 0.999, -1.0, -0.999],
            [0.0, 0.0447, 0.0, -0.0447]
        ];
        let x = normalize_columns(&m).unwrap();
        let p = decode_modes(&x, 0.95).unwrap();
        assert_eq!(p.num_modes(), 2);
        assert_eq!(p.assignment[0], p.assignment[1]);
        assert_eq!(p.assignment[2], p.assignment[3]);
        assert_ne!(p.assignment[0], p.assignment[2]);
    }

    #[test]
    fn exact_cluster_points_recovered_as_modes() {
        // Data already collapsed to three distinct points.
        let m = array![
            [1.0, 1.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 1.0, 0.0]
        ];
        let x = EmbeddingMatrix::new(m).unwrap();
        let p = decode_modes(&x, 0.999).unwrap();
        assert_eq!(p.num_modes(), 3);
        assert_eq!(p.counts, vec![2, 2, 1]);
        assert!((p.modes.column(0)[0] - 1.0).abs() < 1e-12);
        assert!((p.modes.column(1)[1] - 1.0).abs() < 1e-12);
        assert!((p.modes.column(2)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn column_permutation_permutes_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        // Three tight clusters around orthogonal axes.
        let mut m = ndarray::Array2::zeros((3, 12));
        for j in 0..12 {
            let axis = j / 4;
            m[[axis, j]] = 1.0;
            for i in 0..3 {
                if i != axis {
                    m[[i, j]] = 0.02 * rng.gen_range(-1.0..1.0);
                }
            }
        }
        let x = normalize_columns(&m).unwrap();
        let p = decode_modes(&x, 0.95).unwrap();

        // Reverse the column order.
        let perm: Vec<usize> = (0..12).rev().collect();
        let mut mp = ndarray::Array2::zeros((3, 12));
        for (new, &old) in perm.iter().enumerate() {
            mp.column_mut(new).assign(&m.column(old));
        }
        let xp = normalize_columns(&mp).unwrap();
        let pp = decode_modes(&xp, 0.95).unwrap();

        // Same partition up to label permutation.
        for a in 0..12 {
            for b in 0..12 {
                let same = p.assignment[a] == p.assignment[b];
                let same_p = pp.assignment[11 - a] == pp.assignment[11 - b];
                assert_eq!(same, same_p);
            }
        }
    }

    #[test]
    fn proposals_single_beta_reduce_to_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = normalize_columns(&random_matrix(4, 20, &mut rng)).unwrap();
        let cfg = KernelConfig::new(6.0, 1.0, 10).unwrap();
        let props = multi_bandwidth_proposals(&x0, &[6.0], &cfg, 0.95).unwrap();
        let mut x = x0.clone();
        for _ in 0..10 {
            x = gbms_step(&x, &cfg).unwrap().y;
        }
        let part = decode_modes(&x, 0.95).unwrap();
        assert_eq!(props.len(), part.num_modes());
    }

    #[test]
    fn duplicate_betas_deduplicated() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = normalize_columns(&random_matrix(4, 16, &mut rng)).unwrap();
        let cfg = KernelConfig::new(6.0, 1.0, 10).unwrap();
        let single = multi_bandwidth_proposals(&x0, &[6.0], &cfg, 0.95).unwrap();
        let double = multi_bandwidth_proposals(&x0, &[6.0, 6.0], &cfg, 0.95).unwrap();
        assert_eq!(single.len(), double.len());
    }

    #[test]
    fn dedup_idempotence_no_near_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = normalize_columns(&random_matrix(5, 30, &mut rng)).unwrap();
        let cfg = KernelConfig::new(6.0, 1.0, 8).unwrap();
        let props =
            multi_bandwidth_proposals(&x0, &[3.0, 6.0, 9.0, 12.0], &cfg, 0.95).unwrap();
        for a in 0..props.len() {
            for b in (a + 1)..props.len() {
                assert!(mask_iou(&props.masks[a], &props.masks[b]) < DEDUP_IOU);
            }
        }
    }

    #[test]
    fn bandwidth_sweep_yields_at_least_single_beta_count() {
        // Nested clusters: two super-clusters each split into two
        // sub-clusters; finer bandwidths split, coarser merge.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = ndarray::Array2::zeros((3, 24));
        for j in 0..24 {
            let superc = j / 12; // 0 or 1
            let sub = (j / 6) % 2; // sub-cluster within the super-cluster
            m[[0, j]] = if superc == 0 { 1.0 } else { -1.0 };
            m[[1, j]] = (if sub == 0 { 0.35 } else { -0.35 }) + 0.02 * rng.gen_range(-1.0..1.0);
            m[[2, j]] = 0.02 * rng.gen_range(-1.0..1.0);
        }
        let x0 = normalize_columns(&m).unwrap();
        let cfg = KernelConfig::new(6.0, 1.0, 10).unwrap();
        let sweep = multi_bandwidth_proposals(&x0, &[3.0, 6.0, 9.0, 12.0], &cfg, 0.95).unwrap();
        let mut max_single = 0;
        for beta in [3.0, 6.0, 9.0, 12.0] {
            let single = multi_bandwidth_proposals(&x0, &[beta], &cfg, 0.95).unwrap();
            max_single = max_single.max(single.len());
        }
        assert!(sweep.len() >= max_single);
    }
}
