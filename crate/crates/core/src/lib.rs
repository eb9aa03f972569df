//! Calibrated single-pass ranking: a spectral-normalized residual featurizer
//! topped with a random-Fourier-feature Gaussian process head, trained with
//! focal loss, plus the baselines (deterministic, MC Dropout, ensemble, SNGP)
//! and the calibration/ranking metrics used to compare them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod featurizer;
pub mod gp_head;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod spectral_norm;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
