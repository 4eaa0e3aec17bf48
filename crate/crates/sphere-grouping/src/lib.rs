//! Spherical pixel embeddings with a differentiable recurrent mean-shift
//! grouping module.
//!
//! The crate provides the pieces of a small instance-grouping pipeline:
//! unit-norm embedding geometry on the hypersphere ([`embedding`]), a
//! weighted pairwise max-margin loss with margin-bound calculators
//! ([`loss`]), a recurrent Gaussian-Blurring-Mean-Shift module with analytic
//! backward passes ([`gbms`]), a mode decoder turning converged embeddings
//! into discrete partitions ([`decoder`]), synthetic data generators
//! ([`synth`]), a tiny per-pixel network and desk-scale training loops
//! ([`net`], [`toy`]), and IoU/recall evaluation ([`eval`]).
//!
//! All gradients are hand-derived closed forms; finite-difference oracles
//! live in test code only.

pub mod decoder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gbms;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod net;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
