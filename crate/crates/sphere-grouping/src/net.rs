//! Tiny per-pixel network: affine -> rectifier -> affine -> column
//! normalization onto the sphere. Stands in for a full backbone at desk
//! scale; every pixel is mapped independently.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{normalize_columns, normalize_columns_backward, EmbeddingMatrix, GradientBuffer};
use crate::error::{Error, Result};

/// Two-layer per-pixel embedding network.
#[derive(Debug, Clone)]
pub struct PerPixelNet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    pub features: Array2<f64>,
    pub pre_hidden: Array2<f64>,
    pub hidden: Array2<f64>,
    pub raw_out: Array2<f64>,
    pub out: EmbeddingMatrix,
}

/// Parameter gradients matching the network's shapes.
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub d_w1: Array2<f64>,
    pub d_b1: Array1<f64>,
    pub d_w2: Array2<f64>,
    pub d_b2: Array1<f64>,
}

impl PerPixelNet {
    /// Seeded uniform init scaled by fan-in; biases start small positive so
    /// no output column is the zero vector.
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = (1.0 / input as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        Self {
            w1: Array2::from_shape_fn((hidden, input), |_| rng.gen_range(-s1..s1)),
            b1: Array1::from_shape_fn(hidden, |_| rng.gen_range(-0.1..0.1)),
            w2: Array2::from_shape_fn((output, hidden), |_| rng.gen_range(-s2..s2)),
            b2: Array1::from_shape_fn(output, |_| rng.gen_range(0.01..0.1)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    /// Per-pixel affine -> rectifier -> affine, then projection onto the
    /// sphere. Fails with `ZeroColumn` if some pixel maps to the origin.
    pub fn forward(&self, features: &Array2<f64>) -> Result<NetCache> {
        if features.nrows() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature rows", self.input_dim()),
                got: format!("{}", features.nrows()),
            });
        }
        let n = features.ncols();
        let mut pre_hidden = self.w1.dot(features);
        for mut col in pre_hidden.axis_iter_mut(Axis(1)) {
            col += &self.b1;
        }
        let hidden = pre_hidden.mapv(|v| v.max(0.0));
        let mut raw_out = self.w2.dot(&hidden);
        for mut col in raw_out.axis_iter_mut(Axis(1)) {
            col += &self.b2;
        }
        let out = normalize_columns(&raw_out)?;
        debug_assert_eq!(raw_out.ncols(), n);
        Ok(NetCache {
            features: features.clone(),
            pre_hidden,
            hidden,
            raw_out,
            out,
        })
    }

    /// Reverse-mode chain through normalization, the output affine, the
    /// rectifier gate, and the input affine.
    pub fn backward(&self, cache: &NetCache, d_x: &GradientBuffer) -> Result<NetGradients> {
        if d_x.dim() != cache.raw_out.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", cache.raw_out.dim()),
                got: format!("{:?}", d_x.dim()),
            });
        }
        let d_raw = normalize_columns_backward(&cache.raw_out, d_x)?;
        let d_w2 = d_raw.dot(&cache.hidden.t());
        let d_b2 = d_raw.sum_axis(Axis(1));
        let mut d_hidden = self.w2.t().dot(&d_raw);
        // Rectifier gate: dead units pass no gradient.
        ndarray::Zip::from(&mut d_hidden)
            .and(&cache.pre_hidden)
            .for_each(|g, &pre| {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            });
        let d_w1 = d_hidden.dot(&cache.features.t());
        let d_b1 = d_hidden.sum_axis(Axis(1));
        Ok(NetGradients {
            d_w1,
            d_b1,
            d_w2,
            d_b2,
        })
    }

    /// Plain gradient step with learning rate `lr`.
    pub fn apply_gradients(&mut self, grads: &NetGradients, lr: f64) {
        self.w1.scaled_add(-lr, &grads.d_w1);
        self.b1.scaled_add(-lr, &grads.d_b1);
        self.w2.scaled_add(-lr, &grads.d_w2);
        self.b2.scaled_add(-lr, &grads.d_b2);
    }
}
