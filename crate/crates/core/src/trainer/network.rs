//! Backbone plus output head, with the logit-level forward/backward used by training.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::featurizer::{Backbone, BackboneGrads, ForwardCache, Mode};
use crate::gp_head::GpHeadState;
use crate::linalg::{sigmoid, DenseVector};
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseHead {
    #[serde(with = "crate::checkpoint::vector")]
    pub weight: DenseVector,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Dense(DenseHead),
    Gp(GpHeadState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub backbone: Backbone,
    pub head: Head,
}

pub(crate) struct NetCache {
    backbone: ForwardCache,
    h: DenseVector,
    /// RFF features and slopes for GP heads.
    rff: Option<(DenseVector, DenseVector)>,
}

impl NetCache {
    pub(crate) fn rff_features(&self) -> Option<&DenseVector> {
        self.rff.as_ref().map(|(phi, _)| phi)
    }
}

pub(crate) struct NetGrads {
    pub backbone: BackboneGrads,
    pub head: Vec<Vec<f64>>,
}

impl Network {
    /// Training-time logit: the dense affine map, or `phi^T beta` for GP heads.
    pub(crate) fn logit_with_cache(
        &self,
        x: &DenseVector,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(f64, NetCache)> {
        let (h, backbone) = self.backbone.forward(x, mode, dropout_seed)?;
        match &self.head {
            Head::Dense(d) => {
                let z = d.weight.dot(&h) + d.bias;
                Ok((
                    z,
                    NetCache {
                        backbone,
                        h,
                        rff: None,
                    },
                ))
            }
            Head::Gp(gp) => {
                let (phi, slope) = gp.rff_features_with_slope(&h)?;
                let z = gp.logit(&phi)?;
                Ok((
                    z,
                    NetCache {
                        backbone,
                        h,
                        rff: Some((phi, slope)),
                    },
                ))
            }
        }
    }

    /// Gradients of `dlogit * logit` with respect to every trainable parameter.
    pub(crate) fn backward(&self, cache: &NetCache, dlogit: f64) -> Result<NetGrads> {
        let (grad_h, head) = match (&self.head, &cache.rff) {
            (Head::Dense(d), _) => {
                let gw: Vec<f64> = cache.h.iter().map(|v| v * dlogit).collect();
                (&d.weight * dlogit, vec![gw, vec![dlogit]])
            }
            (Head::Gp(gp), Some((phi, slope))) => {
                // d logit / d h = W^T (beta .* slope)
                let weighted = gp.beta.component_mul(slope) * dlogit;
                let grad_h = gp.w_rff.tr_mul(&weighted);
                (grad_h, vec![(phi * dlogit).as_slice().to_vec()])
            }
            (Head::Gp(_), None) => unreachable!("GP forward always records features"),
        };
        let backbone = self.backbone.backward(&cache.backbone, &grad_h)?;
        Ok(NetGrads { backbone, head })
    }

    /// Eval-mode loss for one example and its gradient, flattened in `flat_params` order.
    pub fn loss_gradient(
        &self,
        x: &DenseVector,
        label: u8,
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>)> {
        let (z, cache) = self.logit_with_cache(x, Mode::Eval, 0)?;
        let g = self.backward(&cache, loss.grad(z, label))?;
        let mut flat: Vec<f64> = g
            .backbone
            .slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        flat.extend(g.head.iter().flatten());
        Ok((loss.loss(z, label)?, flat))
    }

    /// Every trainable parameter: backbone layers, then the head.
    pub fn flat_params(&mut self) -> Vec<f64> {
        self.params_mut()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let mut params = self.params_mut();
        let total: usize = params.iter().map(|s| s.len()).sum();
        check_dim("flat parameters", total, values.len())?;
        let mut k = 0;
        for s in params.iter_mut() {
            s.copy_from_slice(&values[k..k + s.len()]);
            k += s.len();
        }
        Ok(())
    }

    pub fn hidden(&self, x: &DenseVector, mode: Mode, dropout_seed: u64) -> Result<DenseVector> {
        Ok(self.backbone.forward(x, mode, dropout_seed)?.0)
    }

    /// Predictive probability. GP heads use the mean-field posterior and must be finalized.
    pub fn prob(&self, x: &DenseVector, mode: Mode, dropout_seed: u64) -> Result<f64> {
        let h = self.hidden(x, mode, dropout_seed)?;
        match &self.head {
            Head::Dense(d) => {
                check_dim("dense head", d.weight.len(), h.len())?;
                Ok(sigmoid(d.weight.dot(&h) + d.bias))
            }
            Head::Gp(gp) => Ok(gp.predict(&h)?.prob),
        }
    }

    /// Trainable parameter slices: backbone layers, then the head.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.backbone.params_mut();
        match &mut self.head {
            Head::Dense(d) => {
                out.push(d.weight.as_mut_slice());
                out.push(std::slice::from_mut(&mut d.bias));
            }
            Head::Gp(gp) => out.push(gp.beta.as_mut_slice()),
        }
        out
    }

    pub fn trainable_param_count(&self) -> usize {
        self.backbone.param_count()
            + match &self.head {
                Head::Dense(d) => d.weight.len() + 1,
                Head::Gp(gp) => gp.beta.len(),
            }
    }

    /// Every stored tensor used at inference, including frozen random
    /// features and the posterior covariance.
    pub fn param_count(&self) -> usize {
        self.backbone.param_count()
            + match &self.head {
                Head::Dense(d) => d.weight.len() + 1,
                Head::Gp(gp) => {
                    gp.w_rff.len()
                        + gp.b_rff.len()
                        + gp.beta.len()
                        + gp.covariance.as_ref().map_or(0, |c| c.len())
                }
            }
    }

    pub fn gp_head(&self) -> Option<&GpHeadState> {
        match &self.head {
            Head::Gp(gp) => Some(gp),
            Head::Dense(_) => None,
        }
    }
}
