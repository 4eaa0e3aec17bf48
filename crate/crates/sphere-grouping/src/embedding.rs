//! Unit-norm embedding geometry on the hypersphere.
//!
//! Embeddings are stored column-wise: a `D x N` matrix holds `N` points on
//! the `(D-1)`-sphere. Similarities are calibrated cosine similarities
//! `s_ij = (1 + x_i'x_j) / 2`, mapping cosine from `[-1, 1]` to `[0, 1]`.
//! Every forward operation here has a matching analytic backward.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Columns are considered unit norm when `|norm - 1|` stays below this.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// A column with norm at or below this cannot be normalized.
pub const ZERO_NORM_TOL: f64 = 1e-12;
/// Norm deviation allowed before similarity computation rejects its input.
pub const SIMILARITY_NORM_TOL: f64 = 1e-6;

/// Gradient with respect to some primal quantity; shape matches the primal.
pub type GradientBuffer = Array2<f64>;

/// `D x N` matrix of unit-length column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Wraps a matrix whose columns are already unit norm.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for (i, col) in data.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            let deviation = (norm - 1.0).abs();
            if deviation > SIMILARITY_NORM_TOL {
                return Err(Error::NotNormalized { col: i, deviation });
            }
        }
        Ok(Self { data })
    }

    /// Wraps without the norm check. For internal use where the invariant
    /// is guaranteed by construction.
    pub(crate) fn new_unchecked(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn column(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.column(i)
    }
}

/// `N x N` symmetric matrix of calibrated cosine similarities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    data: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn num_points(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }
}

/// Projects every column of `m` onto the unit sphere.
pub fn normalize_columns(m: &Array2<f64>) -> Result<EmbeddingMatrix> {
    let mut out = m.clone();
    for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm <= ZERO_NORM_TOL {
            return Err(Error::ZeroColumn(i));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(EmbeddingMatrix::new_unchecked(out))
}

/// Backward pass of [`normalize_columns`]: pulls a gradient on the
/// normalized output back to the raw input.
///
/// Per column with `u = m_i / |m_i|`, the Jacobian is the tangent-space
/// projector `(I - u u') / |m_i|`.
pub fn normalize_columns_backward(
    m: &Array2<f64>,
    d_out: &GradientBuffer,
) -> Result<GradientBuffer> {
    if m.dim() != d_out.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", m.dim()),
            got: format!("{:?}", d_out.dim()),
        });
    }
    let mut grad = Array2::zeros(m.raw_dim());
    for i in 0..m.ncols() {
        let col = m.column(i);
        let norm = col.dot(&col).sqrt();
        if norm <= ZERO_NORM_TOL {
            return Err(Error::ZeroColumn(i));
        }
        let g = d_out.column(i);
        let radial = col.dot(&g) / (norm * norm);
        let mut out = grad.column_mut(i);
        for d in 0..m.nrows() {
            out[d] = (g[d] - col[d] * radial) / norm;
        }
    }
    Ok(grad)
}

/// Calibrated cosine similarity `s_ij = (1 + x_i'x_j) / 2` for all pairs.
pub fn calibrated_similarity(x: &EmbeddingMatrix) -> Result<SimilarityMatrix> {
    let gram = x.data().t().dot(x.data());
    let data = gram.mapv(|v| 0.5 * (1.0 + v.clamp(-1.0, 1.0)));
    Ok(SimilarityMatrix { data })
}

/// Backward pass of [`calibrated_similarity`].
///
/// For `S = (1 + X'X)/2` the gradient is `dX = X (dS + dS') / 2`; when `dS`
/// is symmetric this is `X dS`.
pub fn calibrated_similarity_backward(
    x: &EmbeddingMatrix,
    d_s: &GradientBuffer,
) -> Result<GradientBuffer> {
    let n = x.num_points();
    if d_s.dim() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: format!("({n}, {n})"),
            got: format!("{:?}", d_s.dim()),
        });
    }
    let sym = 0.5 * (d_s + &d_s.t());
    Ok(x.data().dot(&sym))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff, max_rel_err, random_matrix, FD_STEP};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_345_triangle() {
        let m = array![[3.0], [4.0]];
        let x = normalize_columns(&m).unwrap();
        assert!((x.data()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((x.data()[[1, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_identity_case() {
        let m = array![[1.0], [0.0], [0.0]];
        let x = normalize_columns(&m).unwrap();
        assert_eq!(x.data(), &m);
    }

    #[test]
    fn normalize_random_columns_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(5, 7, &mut rng);
        let x = normalize_columns(&m).unwrap();
        for col in x.data().axis_iter(Axis(1)) {
            assert!((col.dot(&col).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_zero_column_errors() {
        let m = array![[1.0, 0.0], [0.0, 0.0]];
        match normalize_columns(&m) {
            Err(Error::ZeroColumn(1)) => {}
            other => panic!("expected ZeroColumn(1), got {other:?}"),
        }
    }

    #[test]
    fn normalize_backward_radial_gradient_vanishes() {
        // Unit-norm column, incoming gradient parallel to it.
        let m = array![[0.6], [0.8]];
        let g = array![[1.2], [1.6]];
        let d = normalize_columns_backward(&m, &g).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn normalize_backward_closed_form() {
        let m = array![[2.0], [0.0]];
        let g = array![[0.0], [1.0]];
        let d = normalize_columns_backward(&m, &g).unwrap();
        assert!((d[[0, 0]]).abs() < 1e-15);
        assert!((d[[1, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_matrix(4, 6, &mut rng);
            let g = random_matrix(4, 6, &mut rng);
            let analytic = normalize_columns_backward(&m, &g).unwrap();
            let numeric = finite_diff(&m, FD_STEP, |m| {
                let x = normalize_columns(m).unwrap();
                (&g * x.data()).sum()
            });
            assert!(max_rel_err(&analytic, &numeric) < 1e-6);
        }
    }

    #[test]
    fn similarity_special_pairs() {
        let m = array![[1.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let x = EmbeddingMatrix::new(m).unwrap();
        let s = calibrated_similarity(&x).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12); // identical
        assert!((s.get(0, 1) - 0.0).abs() < 1e-12); // antipodal
        assert!((s.get(0, 2) - 0.5).abs() < 1e-12); // orthogonal
    }

    #[test]
    fn similarity_rejects_unnormalized() {
        let m = array![[2.0], [0.0]];
        assert!(EmbeddingMatrix::new(m).is_err());
    }

    #[test]
    fn similarity_backward_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normalize_columns(&random_matrix(3, 5, &mut rng)).unwrap();
        let d = calibrated_similarity_backward(&x, &Array2::zeros((5, 5))).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn similarity_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let raw = random_matrix(4, 6, &mut rng);
            let x = normalize_columns(&raw).unwrap();
            let ds_half = random_matrix(6, 6, &mut rng);
            let ds = &ds_half + &ds_half.t(); // symmetric
            let analytic = calibrated_similarity_backward(&x, &ds).unwrap();
            // The oracle treats s = (1 + X'X)/2 as a free function of X.
            let numeric = finite_diff(x.data(), FD_STEP, |m| {
                let s = m.t().dot(m).mapv(|v| 0.5 * (1.0 + v));
                (&ds * &s).sum()
            });
            assert!(max_rel_err(&analytic, &numeric) < 1e-6);
        }
    }

    #[test]
    fn similarity_backward_single_point() {
        let x = EmbeddingMatrix::new(array![[0.6], [0.8]]).unwrap();
        let ds = array![[0.7]];
        let analytic = calibrated_similarity_backward(&x, &ds).unwrap();
        let numeric = finite_diff(x.data(), FD_STEP, |m| {
            let s = m.t().dot(m).mapv(|v| 0.5 * (1.0 + v));
            (&ds * &s).sum()
        });
        assert!(max_rel_err(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn similarity_backward_shape_mismatch() {
        let x = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(calibrated_similarity_backward(&x, &Array2::zeros((3, 3))).is_err());
    }

    proptest! {
        #[test]
        fn similarity_invariants(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 1 + (seed as usize % 8);
            let n = 1 + (seed as usize % 16);
            let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
            let s = calibrated_similarity(&x).unwrap();
            for i in 0..n {
                prop_assert!((s.get(i, i) - 1.0).abs() <= 1e-9);
                for j in 0..n {
                    prop_assert!(s.get(i, j) >= -1e-9 && s.get(i, j) <= 1.0 + 1e-9);
                    prop_assert!((s.get(i, j) - s.get(j, i)).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn normalize_idempotent(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(3, 6, &mut rng);
            let once = normalize_columns(&m).unwrap();
            let twice = normalize_columns(once.data()).unwrap();
            let diff = (once.data() - twice.data()).mapv(f64::abs);
            prop_assert!(diff.iter().all(|v| *v <= 1e-12));
        }
    }
}
