//! Recurrent Gaussian-Blurring-Mean-Shift on the sphere.
//!
//! One step computes, from unit-column `X`:
//!
//! ```text
//! S = X'X          raw inner products
//! K = exp(beta S)  vMF kernel
//! d = K'1          degrees
//! q = 1/d
//! P = (1-eta) I + eta K diag(q)
//! Y = renormalize(X P)
//! ```
//!
//! `K diag(q)` is column stochastic, so each raw update column is a convex
//! combination of the input columns. The kernel is recomputed from the moved
//! points at every step (blurring variant). Every intermediate is cached so
//! the analytic backward pass can run without recomputation, and the unrolled
//! T-loop execution accumulates the pairwise loss at every state.

use ndarray::{Array1, Array2};

use crate::embedding::{
    calibrated_similarity, calibrated_similarity_backward, normalize_columns,
    normalize_columns_backward, EmbeddingMatrix, GradientBuffer,
};
use crate::error::{Error, Result};
use crate::loss::{pair_loss, sample_pixels, InstanceLabeling, LossConfig, LossResult, PixelWeights};

/// Kernel exponent, step size, and loop count for the recurrent module.
#[derive(Debug, Clone, Copy)]
pub struct KernelConfig {
    /// Kernel exponent: `K = exp(beta * X'X)`.
    pub beta: f64,
    /// Step size in `(0, 1]`; `eta = 1` is the blurring (GBMS) case.
    pub eta: f64,
    /// Number of unrolled loops `T`.
    pub loops: usize,
}

impl KernelConfig {
    pub fn new(beta: f64, eta: f64, loops: usize) -> Result<Self> {
        if beta <= 0.0 {
            return Err(Error::InvalidConfig(format!("beta = {beta} must be > 0")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidConfig(format!("eta = {eta} must be in (0, 1]")));
        }
        if loops == 0 {
            return Err(Error::InvalidConfig("loops must be >= 1".into()));
        }
        Ok(Self { beta, eta, loops })
    }
}

impl Default for KernelConfig {
    /// beta = 6 (alpha = 0.5 margin rule), eta = 1, T = 10.
    fn default() -> Self {
        Self {
            beta: 6.0,
            eta: 1.0,
            loops: 10,
        }
    }
}

/// Kernel exponent from the margin: `beta = 3 / (1 - alpha)`, placing the
/// cluster separation at three kernel standard deviations.
pub fn bandwidth_from_margin(alpha: f64) -> Result<f64> {
    if alpha >= 1.0 {
        return Err(Error::InvalidMargin(alpha));
    }
    Ok(3.0 / (1.0 - alpha))
}

/// All intermediates of one forward step, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct GbmsStepCache {
    pub x_in: EmbeddingMatrix,
    pub s: Array2<f64>,
    pub k: Array2<f64>,
    pub d: Array1<f64>,
    pub q: Array1<f64>,
    pub p: Array2<f64>,
    pub y_raw: Array2<f64>,
    pub y: EmbeddingMatrix,
    beta: f64,
    eta: f64,
}

/// One forward step of blurring mean shift.
pub fn gbms_step(x: &EmbeddingMatrix, config: &KernelConfig) -> Result<GbmsStepCache> {
    let s = x.data().t().dot(x.data());
    let k = s.mapv(|v| (config.beta * v).exp());
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow(config.beta));
    }
    let n = x.num_points();
    let d = Array1::from_shape_fn(n, |j| k.column(j).sum());
    let q = d.mapv(|v| 1.0 / v);
    let mut p = Array2::from_shape_fn((n, n), |(i, j)| config.eta * k[[i, j]] * q[j]);
    for i in 0..n {
        p[[i, i]] += 1.0 - config.eta;
    }
    let y_raw = x.data().dot(&p);
    let y = normalize_columns(&y_raw)?;
    Ok(GbmsStepCache {
        x_in: x.clone(),
        s,
        k,
        d,
        q,
        p,
        y_raw,
        y,
        beta: config.beta,
        eta: config.eta,
    })
}

/// Gradients returned by one backward step.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub d_x: GradientBuffer,
    pub d_beta: f64,
}

/// Backward pass of [`gbms_step`]: pulls `d(loss)/dY` (w.r.t. the
/// renormalized output) back to the input embedding and the kernel exponent.
///
/// `d_x` accumulates both paths into `X` (through `S = X'X` and through the
/// product `X P`); `dK` accumulates the paths through `P` and through the
/// degree vector `d`.
pub fn gbms_step_backward(cache: &GbmsStepCache, d_y: &GradientBuffer) -> Result<StepGradients> {
    let (dim, n) = (cache.x_in.dim(), cache.x_in.num_points());
    if d_y.dim() != (dim, n) {
        return Err(Error::ShapeMismatch {
            expected: format!("({dim}, {n})"),
            got: format!("{:?}", d_y.dim()),
        });
    }
    let eta = cache.eta;

    // Renormalization of Y_raw.
    let d_y_raw = normalize_columns_backward(&cache.y_raw, d_y)?;

    // Y_raw = X P.
    let mut d_x = d_y_raw.dot(&cache.p.t());
    let d_p = cache.x_in.data().t().dot(&d_y_raw);

    // P = (1-eta) I + eta K diag(q):  P_ij = (1-eta) [i=j] + eta K_ij q_j.
    let mut d_k = Array2::from_shape_fn((n, n), |(i, j)| eta * d_p[[i, j]] * cache.q[j]);
    let d_q = Array1::from_shape_fn(n, |j| {
        eta * (0..n).map(|i| d_p[[i, j]] * cache.k[[i, j]]).sum::<f64>()
    });

    // q = 1/d.
    let d_d = Array1::from_shape_fn(n, |j| -d_q[j] / (cache.d[j] * cache.d[j]));

    // d = K'1:  d_j = sum_i K_ij.
    for j in 0..n {
        for i in 0..n {
            d_k[[i, j]] += d_d[j];
        }
    }

    // K = exp(beta S).
    let d_s = Array2::from_shape_fn((n, n), |(i, j)| cache.beta * cache.k[[i, j]] * d_k[[i, j]]);
    let d_beta: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cache.s[[i, j]] * cache.k[[i, j]] * d_k[[i, j]])
        .sum();

    // S = X'X.
    let d_s_total = &d_s + &d_s.t();
    d_x = d_x + cache.x_in.data().dot(&d_s_total);

    if d_x.iter().any(|v| !v.is_finite()) || !d_beta.is_finite() {
        return Err(Error::NumericalOverflow(cache.beta));
    }
    Ok(StepGradients { d_x, d_beta })
}

/// Which unrolled loops contribute their loss to the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Accumulate the loss at every state `X^0 .. X^T` (training default).
    AllLoops,
    /// Single loss on the final state `X^T` only.
    FinalOnly,
    /// Loss on the initial embedding only; GBMS runs but contributes no loss.
    InitialOnly,
}

impl LossMode {
    fn weight(&self, t: usize, loops: usize) -> f64 {
        match self {
            LossMode::AllLoops => 1.0,
            LossMode::FinalOnly => {
                if t == loops {
                    1.0
                } else {
                    0.0
                }
            }
            LossMode::InitialOnly => {
                if t == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// States, caches, and per-loop losses of one unrolled forward pass.
#[derive(Debug, Clone)]
pub struct GbmsTrajectory {
    pub states: Vec<EmbeddingMatrix>,
    caches: Vec<GbmsStepCache>,
    pub per_loop_losses: Vec<LossResult>,
    pub loop_weights: Vec<f64>,
    pub total_loss: f64,
}

impl GbmsTrajectory {
    pub fn loops(&self) -> usize {
        self.states.len() - 1
    }

    /// Releases the cached intermediates; the backward pass then fails with
    /// `MissingCache`.
    pub fn drop_caches(&mut self) {
        self.caches.clear();
    }

    pub fn caches(&self) -> &[GbmsStepCache] {
        &self.caches
    }
}

/// Runs `T` forward steps and evaluates the pairwise loss on the initial
/// embedding and on every updated state. One pixel subset is sampled up
/// front and reused across all `T + 1` evaluations so the per-loop losses
/// are comparable and the total is differentiable as one function.
pub fn gbms_unroll(
    x0: &EmbeddingMatrix,
    config: &KernelConfig,
    labels: &InstanceLabeling,
    weights: &PixelWeights,
    loss_cfg: &LossConfig,
    mode: LossMode,
) -> Result<GbmsTrajectory> {
    let subset = sample_pixels(labels, loss_cfg);
    let mut states = vec![x0.clone()];
    let mut caches = Vec::with_capacity(config.loops);
    for _ in 0..config.loops {
        let cache = gbms_step(states.last().unwrap(), config)?;
        states.push(cache.y.clone());
        caches.push(cache);
    }
    let mut per_loop_losses = Vec::with_capacity(states.len());
    let mut loop_weights = Vec::with_capacity(states.len());
    let mut total = 0.0;
    for (t, state) in states.iter().enumerate() {
        let sim = calibrated_similarity(state)?;
        let loss = pair_loss(&sim, labels, weights, loss_cfg, &subset)?;
        let w = mode.weight(t, config.loops);
        total += w * loss.value;
        per_loop_losses.push(loss);
        loop_weights.push(w);
    }
    Ok(GbmsTrajectory {
        states,
        caches,
        per_loop_losses,
        loop_weights,
        total_loss: total,
    })
}

/// Gradients of the accumulated loss w.r.t. the initial embedding and the
/// kernel exponent.
#[derive(Debug, Clone)]
pub struct UnrollGradients {
    pub d_x0: GradientBuffer,
    pub d_beta: f64,
}

/// Reverse sweep over an unrolled trajectory: at each state the loss-path
/// gradient joins the recurrent path, and `d_beta` sums across loops.
pub fn gbms_unroll_backward(traj: &GbmsTrajectory) -> Result<UnrollGradients> {
    let loops = traj.loops();
    if traj.caches.len() != loops {
        return Err(Error::MissingCache);
    }
    // Loss-path gradient at each state, chained through the similarity map.
    let mut loss_grads: Vec<GradientBuffer> = Vec::with_capacity(loops + 1);
    for (t, state) in traj.states.iter().enumerate() {
        let w = traj.loop_weights[t];
        let weighted = traj.per_loop_losses[t].grad_s.mapv(|v| w * v);
        loss_grads.push(calibrated_similarity_backward(state, &weighted)?);
    }

    let mut d_state = loss_grads.pop().unwrap();
    let mut d_beta = 0.0;
    for t in (0..loops).rev() {
        let step = gbms_step_backward(&traj.caches[t], &d_state)?;
        d_beta += step.d_beta;
        d_state = step.d_x + &loss_grads[t];
    }
    Ok(UnrollGradients {
        d_x0: d_state,
        d_beta,
    })
}
