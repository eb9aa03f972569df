//! Training loop, the model variants, and inference for each.
//!
//! | variant        | loss  | head | spectral norm | inference            |
//! |----------------|-------|------|---------------|----------------------|
//! | deterministic  | CE    | dense| no            | one eval pass        |
//! | mc_dropout     | CE    | dense| no            | `mc_passes` masked   |
//! | ensemble       | CE    | dense| no            | mean of members      |
//! | sngp           | CE    | GP   | yes           | one pass, mean-field |
//! | gpf            | focal | GP   | yes           | one pass, mean-field |
//! | focal_only     | focal | dense| no            | one eval pass        |

mod config;
mod evaluate;
mod network;
mod optim;
mod timing;

use serde::{Deserialize, Serialize};

pub use config::{EnsembleMode, OptimizerKind, TrainConfig, Variant};
pub use evaluate::{evaluate, report_from_probs, score_dataset, CalibrationReport};
pub use network::{DenseHead, Head, Network};
pub use optim::Optimizer;
pub use timing::{timing_benchmark, TimingEntry, TimingReport};

use crate::data::{batch_iter, Dataset};
use crate::error::{invalid, Error, Result};
use crate::featurizer::{Backbone, BackboneConfig, BackboneGrads, Mode};
use crate::gp_head::{GpHeadState, PrecisionMode};
use crate::linalg::{derive_seed, sigmoid, DenseVector};

/// Examples per precision update in the post-training posterior pass.
const POSTERIOR_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inference {
    Deterministic,
    McDropout { passes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub network: Network,
    pub inference: Inference,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl Member {
    pub fn predict(&self, x: &DenseVector, seed: u64) -> Result<f64> {
        match self.inference {
            Inference::Deterministic => self.network.prob(x, Mode::Eval, 0),
            Inference::McDropout { passes } => mc_dropout_prob(&self.network, x, passes, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub variant: Variant,
    pub config: TrainConfig,
    pub seed: u64,
    pub members: Vec<Member>,
}

impl TrainedModel {
    /// Mean predictive probability over members. `seed` drives MC Dropout masks.
    pub fn predict(&self, x: &DenseVector, seed: u64) -> Result<f64> {
        if self.members.is_empty() {
            return invalid("model has no members");
        }
        let mut total = 0.0;
        for m in &self.members {
            total += m.predict(x, seed)?;
        }
        Ok(total / self.members.len() as f64)
    }

    pub fn input_dim(&self) -> usize {
        self.members
            .first()
            .map_or(0, |m| m.network.backbone.input_dim())
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(|m| m.network.param_count()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.network.trainable_param_count())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return invalid("model has no members");
        }
        let dim = self.input_dim();
        for m in &self.members {
            if m.network.backbone.input_dim() != dim {
                return invalid("ensemble members disagree on input dimension");
            }
            if let Head::Gp(gp) = &m.network.head {
                if !gp.finalized || gp.covariance.is_none() {
                    return Err(Error::InvalidState("GP head is not finalized".into()));
                }
                if gp.input_dim() != m.network.backbone.hidden_dim() {
                    return invalid("GP head does not match the backbone width");
                }
            }
        }
        Ok(())
    }
}

/// Eval-mode probability averaged over members.
pub fn predict_deterministic(model: &TrainedModel, x: &DenseVector) -> Result<f64> {
    if model.members.is_empty() {
        return invalid("model has no members");
    }
    let mut total = 0.0;
    for m in &model.members {
        total += m.network.prob(x, Mode::Eval, 0)?;
    }
    Ok(total / model.members.len() as f64)
}

/// Mean of `passes` dropout-masked probabilities using mask seeds `seed+1 ..= seed+passes`.
pub fn predict_mc_dropout(
    model: &TrainedModel,
    x: &DenseVector,
    passes: usize,
    seed: u64,
) -> Result<f64> {
    if model.members.is_empty() {
        return invalid("model has no members");
    }
    let mut total = 0.0;
    for m in &model.members {
        total += mc_dropout_prob(&m.network, x, passes, seed)?;
    }
    Ok(total / model.members.len() as f64)
}

/// Arithmetic mean of independently trained models' probabilities.
pub fn predict_ensemble(models: &[TrainedModel], x: &DenseVector, seed: u64) -> Result<f64> {
    if models.is_empty() {
        return invalid("empty ensemble");
    }
    let mut total = 0.0;
    for m in models {
        total += m.predict(x, seed)?;
    }
    Ok(total / models.len() as f64)
}

fn mc_dropout_prob(net: &Network, x: &DenseVector, passes: usize, seed: u64) -> Result<f64> {
    if passes == 0 {
        return invalid("MC Dropout needs at least one pass");
    }
    let mut total = 0.0;
    for k in 1..=passes as u64 {
        total += net.prob(x, Mode::Train, seed.wrapping_add(k))?;
    }
    Ok(total / passes as f64)
}

/// Trains the configured variant on `dataset` with the given seed.
pub fn train(config: &TrainConfig, dataset: &Dataset, seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    dataset.validate()?;
    let mc = Inference::McDropout {
        passes: config.mc_passes,
    };
    let plan: Vec<Inference> = match config.variant {
        Variant::McDropout => vec![mc],
        Variant::Ensemble => (0..config.ensemble_size)
            .map(|i| match config.ensemble_mode {
                EnsembleMode::Mixed if i % 2 == 1 => mc,
                _ => Inference::Deterministic,
            })
            .collect(),
        _ => vec![Inference::Deterministic],
    };
    let members = plan
        .into_iter()
        .enumerate()
        .map(|(i, inference)| {
            let member_seed = if plan_is_single(config.variant) {
                seed
            } else {
                derive_seed(seed, 0xE05E + i as u64)
            };
            let (network, loss_curve) = train_network(config, dataset, member_seed)?;
            Ok(Member {
                network,
                inference,
                loss_curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        variant: config.variant,
        config: config.clone(),
        seed,
        members,
    })
}

fn plan_is_single(v: Variant) -> bool {
    v != Variant::Ensemble
}

fn init_network(config: &TrainConfig, input_dim: usize, seed: u64) -> Result<Network> {
    let variant = config.variant;
    let bb_cfg = BackboneConfig {
        input_dim,
        hidden_dim: config.hidden_dim,
        depth: config.depth,
        dropout_rate: config.dropout_rate,
        sn_enabled: variant.uses_spectral_norm(),
        sn_cap: config.sn_c,
        activation: crate::featurizer::Activation::Tanh,
    };
    let backbone = Backbone::new(bb_cfg, derive_seed(seed, 1))?;
    let head = if variant.uses_gp_head() {
        Head::Gp(GpHeadState::new(
            config.hidden_dim,
            config.rff_dim,
            config.alpha,
            config.precision_mode,
            derive_seed(seed, 2),
        )?)
    } else {
        Head::Dense(DenseHead {
            weight: DenseVector::zeros(config.hidden_dim),
            bias: 0.0,
        })
    };
    Ok(Network { backbone, head })
}

/// Weight training followed, for GP heads, by posterior accumulation and finalization.
pub fn train_network(
    config: &TrainConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    let loss = config.loss()?;
    let mut net = init_network(config, dataset.dim, seed)?;
    let shapes: Vec<usize> = net.params_mut().iter().map(|s| s.len()).collect();
    let mut opt = Optimizer::new(config, &shapes);
    let n = dataset.len();
    let dropout_master = derive_seed(seed, 3);
    let sn = net.backbone.sn_enabled;
    let momentum = matches!(&net.head, Head::Gp(gp) if gp.mode == PrecisionMode::Momentum);

    let mut curve = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let mut seen = 0u64;
    for epoch in 0..config.epochs {
        let batches = batch_iter(n, config.batch_size, derive_seed(seed, 100 + epoch as u64))?;
        let mut epoch_loss = 0.0;
        for batch in batches {
            let mut bb_grad = BackboneGrads::zeros_like(&net.backbone);
            let mut head_grad: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            let mut phis = Vec::new();
            let mut probs = Vec::new();
            for &i in &batch {
                let ex = &dataset.examples[i];
                let (z, cache) = net.logit_with_cache(
                    &ex.features,
                    Mode::Train,
                    derive_seed(dropout_master, seen),
                )?;
                seen += 1;
                let l = loss.loss(z, ex.label)?;
                if !l.is_finite() || !z.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        detail: format!("loss {l} at logit {z}"),
                    });
                }
                batch_loss += l;
                let g = net.backward(&cache, loss.grad(z, ex.label))?;
                bb_grad.accumulate(&g.backbone);
                match &mut head_grad {
                    None => head_grad = Some(g.head),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g.head) {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                if momentum {
                    phis.push(cache.rff_features().expect("GP cache").clone());
                    probs.push(sigmoid(z));
                }
            }
            let m = batch.len() as f64;
            bb_grad.scale(1.0 / m);
            let mut head_grad = head_grad.expect("non-empty batch");
            for t in &mut head_grad {
                t.iter_mut().for_each(|v| *v /= m);
            }
            // N(0, I) prior on beta, spread over the N training examples.
            if let Head::Gp(gp) = &net.head {
                for (g, b) in head_grad[0].iter_mut().zip(gp.beta.iter()) {
                    *g += b / n as f64;
                }
            }
            let mut grads: Vec<&[f64]> = bb_grad.slices();
            grads.extend(head_grad.iter().map(Vec::as_slice));
            opt.step(&mut net.params_mut(), &grads)?;
            if sn {
                net.backbone.sn_step(config.sn_c)?;
            }
            if momentum {
                if let Head::Gp(gp) = &mut net.head {
                    gp.update_precision(&phis, &probs)?;
                }
            }
            epoch_loss += batch_loss;
            step += 1;
        }
        curve.push(epoch_loss / n as f64);
    }

    if let Head::Gp(_) = &net.head {
        if !momentum {
            accumulate_posterior(&mut net, dataset)?;
        }
        if let Head::Gp(gp) = &mut net.head {
            gp.finalize_posterior()?;
        }
    }
    Ok((net, curve))
}

/// One eval-mode sweep adding `p(1-p) phi phi^T` for every training example to the identity.
fn accumulate_posterior(net: &mut Network, dataset: &Dataset) -> Result<()> {
    let mut feats = Vec::with_capacity(dataset.len());
    {
        let Head::Gp(gp) = &net.head else {
            return Ok(());
        };
        for ex in &dataset.examples {
            let h = net.backbone.forward(&ex.features, Mode::Eval, 0)?.0;
            let phi = gp.rff_features(&h)?;
            let p = sigmoid(gp.logit(&phi)?);
            feats.push((phi, p));
        }
    }
    let Head::Gp(gp) = &mut net.head else {
        unreachable!()
    };
    gp.reset_precision()?;
    for chunk in feats.chunks(POSTERIOR_CHUNK) {
        let phis: Vec<DenseVector> = chunk.iter().map(|(phi, _)| phi.clone()).collect();
        let probs: Vec<f64> = chunk.iter().map(|(_, p)| *p).collect();
        gp.update_precision(&phis, &probs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_classification;

    fn quick(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            hidden_dim: 8,
            depth: 2,
            rff_dim: 32,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let ds = gen_classification(64, 3, 2.0, 1).unwrap();
        for v in [Variant::Deterministic, Variant::FocalOnly] {
            let mut cfg = quick(v);
            cfg.learning_rate = 0.0;
            let model = train(&cfg, &ds, 5).unwrap();
            let init = init_network(&cfg, 3, 5).unwrap();
            assert_eq!(
                model.members[0]
                    .network
                    .backbone
                    .layers()
                    .cloned()
                    .collect::<Vec<_>>(),
                init.backbone.layers().cloned().collect::<Vec<_>>()
            );
            assert_eq!(model.members[0].network.head, init.head);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let ds = gen_classification(64, 3, 2.0, 1).unwrap();
        for v in Variant::ALL {
            let cfg = quick(v);
            assert_eq!(
                train(&cfg, &ds, 9).unwrap(),
                train(&cfg, &ds, 9).unwrap(),
                "{v}"
            );
        }
    }

    #[test]
    fn untrained_dense_head_predicts_half() {
        let ds = gen_classification(8, 3, 2.0, 1).unwrap();
        let net = init_network(&quick(Variant::Deterministic), 3, 1).unwrap();
        let model = TrainedModel {
            variant: Variant::Deterministic,
            config: quick(Variant::Deterministic),
            seed: 1,
            members: vec![Member {
                network: net,
                inference: Inference::Deterministic,
                loss_curve: vec![],
            }],
        };
        assert_eq!(
            predict_deterministic(&model, &ds.examples[0].features).unwrap(),
            0.5
        );
    }

    #[test]
    fn gp_variants_are_finalized() {
        let ds = gen_classification(64, 3, 2.0, 1).unwrap();
        for v in [Variant::Sngp, Variant::Gpf] {
            let model = train(&quick(v), &ds, 2).unwrap();
            let gp = model.members[0].network.gp_head().unwrap();
            assert!(gp.finalized);
            assert_eq!(gp.diagnostics.accumulated, 64);
        }
        let mut cfg = quick(Variant::Gpf);
        cfg.precision_mode = PrecisionMode::Momentum;
        let model = train(&cfg, &ds, 2).unwrap();
        assert!(model.members[0].network.gp_head().unwrap().finalized);
    }

    #[test]
    fn ensemble_members_follow_mode() {
        let ds = gen_classification(32, 3, 2.0, 1).unwrap();
        let mut cfg = quick(Variant::Ensemble);
        cfg.ensemble_size = 3;
        let model = train(&cfg, &ds, 1).unwrap();
        let kinds: Vec<_> = model.members.iter().map(|m| m.inference).collect();
        assert_eq!(kinds[0], Inference::Deterministic);
        assert_eq!(kinds[1], Inference::McDropout { passes: 10 });
        assert_eq!(kinds[2], Inference::Deterministic);
        assert_ne!(model.members[0].network, model.members[2].network);
    }

    #[test]
    fn mc_dropout_cases() {
        let ds = gen_classification(64, 3, 2.0, 1).unwrap();
        let mut cfg = quick(Variant::Deterministic);
        cfg.dropout_rate = 0.0;
        let model = train(&cfg, &ds, 3).unwrap();
        let x = &ds.examples[0].features;
        let det = predict_deterministic(&model, x).unwrap();
        assert_eq!(predict_mc_dropout(&model, x, 7, 11).unwrap(), det);
        assert!(predict_mc_dropout(&model, x, 0, 11).is_err());

        let model = train(&quick(Variant::McDropout), &ds, 3).unwrap();
        let single = model.members[0].network.prob(x, Mode::Train, 12).unwrap();
        assert_eq!(predict_mc_dropout(&model, x, 1, 11).unwrap(), single);
    }

    #[test]
    fn ensemble_averages() {
        let ds = gen_classification(32, 3, 2.0, 1).unwrap();
        let a = train(&quick(Variant::Deterministic), &ds, 1).unwrap();
        let b = train(&quick(Variant::FocalOnly), &ds, 2).unwrap();
        let c = train(&quick(Variant::Gpf), &ds, 3).unwrap();
        let x = &ds.examples[3].features;
        let single = a.predict(x, 0).unwrap();
        assert_eq!(
            predict_ensemble(&[a.clone(), a.clone()], x, 0).unwrap(),
            single
        );
        let ps = [single, b.predict(x, 0).unwrap(), c.predict(x, 0).unwrap()];
        let e = predict_ensemble(&[a, b, c], x, 0).unwrap();
        assert!((e - ps.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!(
            e >= ps.iter().cloned().fold(1.0, f64::min)
                && e <= ps.iter().cloned().fold(0.0, f64::max)
        );
        assert!(predict_ensemble(&[], x, 0).is_err());
    }
}
