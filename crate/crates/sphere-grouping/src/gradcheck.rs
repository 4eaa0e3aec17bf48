//! Central finite-difference oracles for verifying the analytic backward
//! passes, plus the named per-path checks driven by the `gradcheck` CLI
//! command and the acceptance suite.
//!
//! The oracles here never call a backward function; they re-evaluate the
//! forward map at perturbed inputs only.

use ndarray::Array2;
use rand::Rng;

/// Central-difference step used throughout (double precision).
pub const FD_STEP: f64 = 1e-6;
/// Per-path tolerance on max relative error.
pub const PATH_TOL: f64 = 1e-5;
/// Looser tolerance for the full composite chain (net through unrolled loss).
pub const COMPOSITE_TOL: f64 = 1e-4;

/// Central finite differences of a scalar function over every matrix entry.
pub fn finite_diff<F>(point: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(point.raw_dim());
    let mut work = point.clone();
    for idx in ndarray::indices(point.raw_dim()) {
        let orig = work[idx];
        work[idx] = orig + h;
        let plus = f(&work);
        work[idx] = orig - h;
        let minus = f(&work);
        work[idx] = orig;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Central finite difference of a scalar function of a scalar.
pub fn finite_diff_scalar<F>(point: f64, h: f64, mut f: F) -> f64
where
    F: FnMut(f64) -> f64,
{
    (f(point + h) - f(point - h)) / (2.0 * h)
}

/// Max relative error between an analytic and a numeric gradient, with an
/// absolute floor so near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

pub fn scalar_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Matrix with entries uniform in `[-1, 1]`.
pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Result of checking one named gradient path.
#[derive(Debug, Clone)]
pub struct PathReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl PathReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Which analytic path to corrupt for the negative-control run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Flip the sign of the named path's analytic gradient before comparing.
    SignFlip(&'static str),
}

mod paths;
pub use paths::{run_all_paths, GradcheckConfig};
