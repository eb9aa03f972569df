//! Binary cross-entropy and focal loss on the probability of the true class,
//! with analytic gradients with respect to the relevance logit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{log_sigmoid, sigmoid};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Focusing parameter. Zero reduces focal loss to cross-entropy.
    pub gamma: f64,
}

impl LossConfig {
    pub fn cross_entropy() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            gamma: 0.0,
        }
    }

    pub fn focal(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return invalid(format!("focal gamma must be >= 0, got {gamma}"));
        }
        Ok(Self {
            kind: LossKind::Focal,
            gamma,
        })
    }

    /// Loss of a single example given its logit and binary label.
    pub fn loss(&self, logit: f64, label: u8) -> Result<f64> {
        let p_true = true_class_prob(logit, label);
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(p_true),
            LossKind::Focal => focal_loss(p_true, self.gamma),
        }
    }

    /// d loss / d logit.
    pub fn grad(&self, logit: f64, label: u8) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => focal_loss_grad(logit, label, 0.0),
            LossKind::Focal => focal_loss_grad(logit, label, self.gamma),
        }
    }
}

fn label_sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn true_class_prob(logit: f64, label: u8) -> f64 {
    sigmoid(label_sign(label) * logit)
}

fn clamp_prob(p: f64) -> Result<f64> {
    if p.is_nan() {
        return invalid("probability is NaN");
    }
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// `-ln p_true`.
pub fn cross_entropy(p_true: f64) -> Result<f64> {
    let p = clamp_prob(p_true)?;
    Ok(-p.ln())
}

/// `(1 - p_true)^gamma * (-ln p_true)`.
pub fn focal_loss(p_true: f64, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return invalid(format!("focal gamma must be >= 0, got {gamma}"));
    }
    let p = clamp_prob(p_true)?;
    Ok((1.0 - p).powf(gamma) * (-p.ln()))
}

/// Gradient of focal loss with respect to the logit `z`.
///
/// With `s = +1` for a positive label and `-1` otherwise, `p = sigmoid(s z)`:
///
/// `dL/dz = s * (1 - p)^gamma * (gamma * p * ln p - (1 - p))`
///
/// which reduces to the familiar `sigmoid(z) - y` when `gamma = 0`. The
/// expression is evaluated without clamping, so it stays smooth in the tails.
pub fn focal_loss_grad(logit: f64, label: u8, gamma: f64) -> f64 {
    let s = label_sign(label);
    let p = sigmoid(s * logit);
    let q = sigmoid(-s * logit);
    let ln_p = log_sigmoid(s * logit);
    let weight = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    s * weight * (gamma * p * ln_p - q)
}

/// `-p ln p`, the single-outcome entropy term that appears when the focal
/// weight is expanded to first order.
pub fn entropy_term(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.ln()
    }
}
