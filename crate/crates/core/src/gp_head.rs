//! Random-Fourier-feature Gaussian process output layer with a Laplace posterior.
//!
//! Features are `phi(h) = sqrt(2/L) * cos(-W h + b)` with `W ~ N(0, 1)` and
//! `b ~ U(0, 2 pi)` frozen at construction, approximating a unit-bandwidth RBF
//! kernel. The output weights `beta` are fit by gradient descent; the
//! posterior precision `I + sum p(1-p) phi phi^T` is accumulated from the
//! logistic Hessian and inverted once training ends.

use std::f64::consts::PI;

use nalgebra::Cholesky;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{all_finite, gaussian_matrix, rng, sigmoid, DenseMatrix, DenseVector};

pub const DEFAULT_RFF_DIM: usize = 256;
pub const DEFAULT_MOMENTUM: f64 = 0.99;
/// Logistic mean-field constant, `pi / 8`.
pub const MEAN_FIELD_LAMBDA: f64 = PI / 8.0;

const PROB_FLOOR: f64 = 1e-6;
const FINALIZE_RIDGE: f64 = 1e-6;

/// How `update_precision` folds a batch into the running precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// `P <- P + sum p(1-p) phi phi^T`, starting from the identity.
    Exact,
    /// `P <- alpha P + (1 - alpha) sum p(1-p) phi phi^T`.
    Momentum,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GpDiagnostics {
    /// Probabilities outside `(0, 1)` that had to be clamped.
    pub clamped_probs: usize,
    /// Examples folded into the precision since the last reset.
    pub accumulated: usize,
    /// Whether finalization needed the ridge retry.
    pub ridge_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHeadState {
    #[serde(with = "crate::checkpoint::matrix")]
    pub w_rff: DenseMatrix,
    #[serde(with = "crate::checkpoint::vector")]
    pub b_rff: DenseVector,
    #[serde(with = "crate::checkpoint::vector")]
    pub beta: DenseVector,
    #[serde(with = "crate::checkpoint::matrix")]
    pub precision: DenseMatrix,
    #[serde(with = "crate::checkpoint::opt_matrix")]
    pub covariance: Option<DenseMatrix>,
    pub alpha: f64,
    pub mode: PrecisionMode,
    pub finalized: bool,
    pub diagnostics: GpDiagnostics,
}

/// Posterior predictive summary at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    pub mean: f64,
    pub variance: f64,
    pub prob: f64,
}

impl GpHeadState {
    /// Samples the frozen projection and starts from the `N(0, I)` prior.
    pub fn new(d: usize, l: usize, alpha: f64, mode: PrecisionMode, seed: u64) -> Result<Self> {
        if d == 0 || l == 0 {
            return invalid(format!("GP head needs d, L >= 1 (got d={d}, L={l})"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {alpha}"));
        }
        let mut r = rng(seed);
        let w_rff = gaussian_matrix(l, d, &mut r);
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let b_rff = DenseVector::from_fn(l, |_, _| phase.sample(&mut r));
        Ok(Self {
            w_rff,
            b_rff,
            beta: DenseVector::zeros(l),
            precision: DenseMatrix::identity(l, l),
            covariance: None,
            alpha,
            mode,
            finalized: false,
            diagnostics: GpDiagnostics::default(),
        })
    }

    pub fn rff_dim(&self) -> usize {
        self.w_rff.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_rff.ncols()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.rff_dim() as f64).sqrt()
    }

    /// `sqrt(2/L) * cos(-W h + b)`.
    pub fn rff_features(&self, h: &DenseVector) -> Result<DenseVector> {
        check_dim("rff input", self.input_dim(), h.len())?;
        if !all_finite(h.as_slice()) {
            return invalid("non-finite feature vector");
        }
        let scale = self.scale();
        let mut arg = &self.b_rff - &self.w_rff * h;
        arg.apply(|a| *a = scale * a.cos());
        Ok(arg)
    }

    /// Features plus the pieces needed to backpropagate through them.
    ///
    /// Returns `(phi, s)` with `s_j = sqrt(2/L) * sin(b_j - w_j . h)`, so that
    /// `d phi_j / d h = s_j * w_j`.
    pub(crate) fn rff_features_with_slope(
        &self,
        h: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        check_dim("rff input", self.input_dim(), h.len())?;
        if !all_finite(h.as_slice()) {
            return invalid("non-finite feature vector");
        }
        let scale = self.scale();
        let arg = &self.b_rff - &self.w_rff * h;
        let phi = arg.map(|a| scale * a.cos());
        let slope = arg.map(|a| scale * a.sin());
        Ok((phi, slope))
    }

    /// `phi^T beta`.
    pub fn logit(&self, phi: &DenseVector) -> Result<f64> {
        check_dim("rff features", self.rff_dim(), phi.len())?;
        Ok(phi.dot(&self.beta))
    }

    /// Clears the accumulated curvature back to the identity prior.
    pub fn reset_precision(&mut self) -> Result<()> {
        if self.finalized {
            return Err(Error::InvalidState(
                "cannot reset the precision of a finalized GP head".into(),
            ));
        }
        let l = self.rff_dim();
        self.precision = DenseMatrix::identity(l, l);
        self.diagnostics.accumulated = 0;
        Ok(())
    }

    /// Folds a batch of features and their current probabilities into the precision.
    pub fn update_precision(&mut self, phis: &[DenseVector], probs: &[f64]) -> Result<()> {
        if self.finalized {
            return Err(Error::InvalidState(
                "precision update on a finalized GP head".into(),
            ));
        }
        check_dim("precision batch", phis.len(), probs.len())?;
        let l = self.rff_dim();
        // Columns sqrt(p(1-p)) * phi_i, so the batch term is A A^T.
        let mut scaled = DenseMatrix::zeros(l, phis.len());
        for (i, (phi, &p)) in phis.iter().zip(probs).enumerate() {
            check_dim("rff features", l, phi.len())?;
            let p = if p.is_nan() {
                return invalid("NaN probability in precision update");
            } else if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p) {
                if p <= 0.0 || p >= 1.0 {
                    self.diagnostics.clamped_probs += 1;
                }
                p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
            } else {
                p
            };
            let w = (p * (1.0 - p)).sqrt();
            scaled.column_mut(i).copy_from(&(phi * w));
        }
        let batch = &scaled * scaled.transpose();
        match self.mode {
            PrecisionMode::Exact => self.precision += batch,
            PrecisionMode::Momentum => {
                self.precision *= self.alpha;
                self.precision += batch * (1.0 - self.alpha);
            }
        }
        symmetrize(&mut self.precision);
        self.diagnostics.accumulated += phis.len();
        Ok(())
    }

    /// Inverts the precision into the posterior covariance.
    pub fn finalize_posterior(&mut self) -> Result<()> {
        let l = self.rff_dim();
        let inverse = match Cholesky::new(self.precision.clone()) {
            Some(chol) => chol.inverse(),
            None => {
                let ridged = &self.precision + DenseMatrix::identity(l, l) * FINALIZE_RIDGE;
                let chol = Cholesky::new(ridged).ok_or_else(|| {
                    Error::Numerical("posterior precision is not positive definite".into())
                })?;
                self.diagnostics.ridge_applied = true;
                chol.inverse()
            }
        };
        let mut cov = inverse;
        symmetrize(&mut cov);
        self.covariance = Some(cov);
        self.finalized = true;
        Ok(())
    }

    /// Reopens a finalized head for further training.
    pub fn unfinalize(&mut self) {
        self.covariance = None;
        self.finalized = false;
    }

    /// Posterior mean, variance, and mean-field probability at a raw feature `h`.
    pub fn predict(&self, h: &DenseVector) -> Result<GpPrediction> {
        let phi = self.rff_features(h)?;
        self.predict_from_features(&phi)
    }

    pub fn predict_from_features(&self, phi: &DenseVector) -> Result<GpPrediction> {
        let cov = match (&self.covariance, self.finalized) {
            (Some(c), true) => c,
            _ => {
                return Err(Error::InvalidState(
                    "GP head must be finalized before prediction".into(),
                ))
            }
        };
        let mean = self.logit(phi)?;
        let variance = quad_form(cov, phi).max(0.0);
        Ok(GpPrediction {
            mean,
            variance,
            prob: mean_field_prob(mean, variance),
        })
    }
}

/// `sigmoid(mean / sqrt(1 + lambda * variance))` with `lambda = pi / 8`.
pub fn mean_field_prob(mean: f64, variance: f64) -> f64 {
    sigmoid(mean / (1.0 + MEAN_FIELD_LAMBDA * variance.max(0.0)).sqrt())
}

fn quad_form(m: &DenseMatrix, v: &DenseVector) -> f64 {
    v.dot(&(m * v))
}

fn symmetrize(m: &mut DenseMatrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_vector, SeededRng};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn head(d: usize, l: usize, seed: u64) -> GpHeadState {
        GpHeadState::new(d, l, DEFAULT_MOMENTUM, PrecisionMode::Exact, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_prior() {
        let a = head(8, 16, 7);
        let b = head(8, 16, 7);
        assert_eq!(a, b);
        assert_eq!(a.precision, DenseMatrix::identity(16, 16));
        assert!(a.beta.iter().all(|&x| x == 0.0));
        assert!(!a.finalized);
        assert!(a.b_rff.iter().all(|&x| (0.0..2.0 * PI).contains(&x)));
        assert!(GpHeadState::new(0, 4, 0.9, PrecisionMode::Exact, 0).is_err());
        assert!(GpHeadState::new(4, 0, 0.9, PrecisionMode::Exact, 0).is_err());
        assert!(GpHeadState::new(4, 4, 0.0, PrecisionMode::Exact, 0).is_err());
    }

    #[test]
    fn projection_moments() {
        let h = head(1000, 1000, 99);
        let n = 1_000_000.0;
        let mean = h.w_rff.iter().sum::<f64>() / n;
        let var = h.w_rff.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn zero_input_features() {
        let h = head(5, 32, 1);
        let phi = h.rff_features(&DenseVector::zeros(5)).unwrap();
        let scale = (2.0f64 / 32.0).sqrt();
        for j in 0..32 {
            assert!((phi[j] - scale * h.b_rff[j].cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn features_are_bounded_and_validated() {
        let h = head(5, 64, 2);
        let mut r = rng(3);
        let bound = (2.0f64 / 64.0).sqrt();
        for _ in 0..50 {
            let x = gaussian_vector(5, &mut r) * 3.0;
            let phi = h.rff_features(&x).unwrap();
            assert!(phi.amax() <= bound + 1e-15);
        }
        let mut bad = DenseVector::zeros(5);
        bad[2] = f64::NAN;
        assert!(h.rff_features(&bad).is_err());
        assert!(h.rff_features(&DenseVector::zeros(4)).is_err());
    }

    #[test]
    fn logit_cases() {
        let mut h = head(3, 8, 4);
        let phi = h
            .rff_features(&DenseVector::from_vec(vec![0.1, -0.2, 0.3]))
            .unwrap();
        assert_eq!(h.logit(&phi).unwrap(), 0.0);
        h.beta[5] = 1.0;
        assert_eq!(h.logit(&phi).unwrap(), phi[5]);

        let mut r = rng(8);
        h.beta = gaussian_vector(8, &mut r);
        let oracle: f64 = (0..8).map(|j| phi[j] * h.beta[j]).sum();
        assert!((h.logit(&phi).unwrap() - oracle).abs() < 1e-12);
        assert!(h.logit(&DenseVector::zeros(7)).is_err());
    }

    #[test]
    fn vanishing_curvature_leaves_scaled_precision() {
        let mut h = GpHeadState::new(3, 4, 0.9, PrecisionMode::Momentum, 5).unwrap();
        let phi = DenseVector::from_element(4, 0.5);
        h.update_precision(&[phi], &[1e-12]).unwrap();
        let expected = DenseMatrix::identity(4, 4) * 0.9;
        // p clamps to 1e-6, so the update term is ~1e-7 * 0.25
        assert!((&h.precision - expected).norm() < 1e-7);
    }

    #[test]
    fn single_exact_update() {
        let l = 16;
        let mut h = head(3, l, 6);
        let mut phi = DenseVector::zeros(l);
        phi[0] = (2.0 / l as f64).sqrt();
        h.update_precision(&[phi], &[0.5]).unwrap();
        let mut expected = DenseMatrix::identity(l, l);
        expected[(0, 0)] += 0.25 * 2.0 / l as f64;
        assert!((&h.precision - expected).norm() < 1e-15);
    }

    #[test]
    fn out_of_range_probs_are_clamped_and_counted() {
        let mut h = head(2, 4, 1);
        let phi = DenseVector::from_element(4, 0.3);
        h.update_precision(&[phi.clone(), phi], &[0.0, 1.2])
            .unwrap();
        assert_eq!(h.diagnostics.clamped_probs, 2);
        assert!(h
            .update_precision(&[DenseVector::zeros(4)], &[f64::NAN])
            .is_err());
    }

    #[test]
    fn exact_pass_matches_closed_form() {
        let (d, l) = (4, 32);
        let mut h = head(d, l, 10);
        let mut r = rng(11);
        let xs: Vec<DenseVector> = (0..50).map(|_| gaussian_vector(d, &mut r)).collect();
        let phis: Vec<DenseVector> = xs.iter().map(|x| h.rff_features(x).unwrap()).collect();
        let probs: Vec<f64> = (0..50).map(|_| r.random_range(0.01..0.99)).collect();

        for (chunk_phi, chunk_p) in phis.chunks(16).zip(probs.chunks(16)) {
            h.update_precision(chunk_phi, chunk_p).unwrap();
        }

        let mut oracle = DenseMatrix::identity(l, l);
        for (phi, p) in phis.iter().zip(&probs) {
            for i in 0..l {
                for j in 0..l {
                    oracle[(i, j)] += p * (1.0 - p) * phi[i] * phi[j];
                }
            }
        }
        assert!((&h.precision - oracle).norm() < 1e-10);
    }

    #[test]
    fn finalize_cases() {
        let mut h = head(2, 6, 3);
        h.finalize_posterior().unwrap();
        assert!((h.covariance.as_ref().unwrap() - DenseMatrix::identity(6, 6)).norm() < 1e-15);
        assert!(h.update_precision(&[], &[]).is_err());

        let mut h = head(2, 6, 3);
        let diag = DenseVector::from_vec(vec![2.0, 4.0, 5.0, 8.0, 10.0, 1.0]);
        h.precision = DenseMatrix::from_diagonal(&diag);
        h.finalize_posterior().unwrap();
        let cov = h.covariance.as_ref().unwrap();
        for i in 0..6 {
            assert!((cov[(i, i)] - 1.0 / diag[i]).abs() < 1e-15);
        }

        let mut h = head(2, 10, 4);
        let a = gaussian_matrix(10, 10, &mut rng(1));
        h.precision = &a * a.transpose() + DenseMatrix::identity(10, 10);
        h.finalize_posterior().unwrap();
        let cov = h.covariance.clone().unwrap();
        let prod = &h.precision * &cov;
        assert!((prod - DenseMatrix::identity(10, 10)).norm() / 10f64.sqrt() < 1e-6);
        assert!((&cov - cov.transpose()).amax() < 1e-8);
    }

    #[test]
    fn indefinite_precision_is_a_hard_error() {
        let mut h = head(2, 3, 4);
        h.precision = -DenseMatrix::identity(3, 3);
        assert!(matches!(h.finalize_posterior(), Err(Error::Numerical(_))));
    }

    #[test]
    fn prediction_requires_finalization() {
        let h = head(2, 8, 1);
        assert!(h.predict(&DenseVector::zeros(2)).is_err());
    }

    #[test]
    fn mean_field_limits() {
        assert_eq!(mean_field_prob(1.7, 0.0), sigmoid(1.7));
        assert!((mean_field_prob(3.0, 1e6) - 0.5).abs() < 0.01);
    }

    fn mc_sigmoid(mean: f64, var: f64, n: usize, r: &mut SeededRng) -> f64 {
        let sd = var.sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(r);
                sigmoid(mean + sd * z)
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn mean_field_tracks_monte_carlo() {
        let mut r = rng(77);
        let mc = mc_sigmoid(1.0, 2.0, 100_000, &mut r);
        assert!((mean_field_prob(1.0, 2.0) - mc).abs() < 0.01);
    }

    #[test]
    fn predict_assembles_mean_and_variance() {
        let mut h = head(3, 16, 12);
        h.beta = gaussian_vector(16, &mut rng(1));
        h.finalize_posterior().unwrap();
        let x = DenseVector::from_vec(vec![0.3, -0.1, 0.2]);
        let phi = h.rff_features(&x).unwrap();
        let pred = h.predict(&x).unwrap();
        assert!((pred.mean - phi.dot(&h.beta)).abs() < 1e-12);
        assert!((pred.variance - phi.norm_squared()).abs() < 1e-12);
        assert_eq!(pred.prob, mean_field_prob(pred.mean, pred.variance));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn prob_increases_with_mean(m in -10.0f64..10.0, dm in 1e-3f64..2.0, var in 0.0f64..50.0) {
                prop_assert!(mean_field_prob(m + dm, var) > mean_field_prob(m, var));
            }

            #[test]
            fn exact_precision_quadratic_form_non_decreasing(seed in 0u64..1000) {
                let mut h = head(3, 8, seed);
                let mut r = rng(seed + 1);
                let v = gaussian_vector(8, &mut r);
                let mut last = v.dot(&(&h.precision * &v));
                for _ in 0..5 {
                    let x = gaussian_vector(3, &mut r);
                    let phi = h.rff_features(&x).unwrap();
                    let p: f64 = r.random_range(0.0..1.0);
                    h.update_precision(&[phi], &[p]).unwrap();
                    let now = v.dot(&(&h.precision * &v));
                    prop_assert!(now >= last - 1e-12);
                    last = now;
                }
            }
        }
    }
}
