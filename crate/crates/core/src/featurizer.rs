//! Residual feed-forward feature extractor with inverted dropout and optional
//! per-step spectral normalization.
//!
//! Layout: a linear input projection `h0 = W0 x + b0` followed by `depth`
//! residual blocks `h <- h + mask * act(W h + b)`. When spectral
//! normalization is enabled every weight, including the input projection, is
//! kept at spectral norm `<= c`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{all_finite, derive_seed, rng, DenseMatrix, DenseVector};
use crate::spectral_norm::{
    apply_spectral_norm, estimate_spectral_norm, PowerIterState, DEFAULT_SN_CAP,
};

/// Power iterations used to bring freshly initialized weights under the cap.
const INIT_SN_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Identity; used to check gradients and dropout expectations in closed form.
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    #[serde(with = "crate::checkpoint::matrix")]
    pub weight: DenseMatrix,
    #[serde(with = "crate::checkpoint::vector")]
    pub bias: DenseVector,
}

impl DenseLayer {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub dropout_rate: f64,
    pub sn_enabled: bool,
    pub sn_cap: f64,
    pub activation: Activation,
}

impl BackboneConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, depth: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            depth,
            dropout_rate: 0.1,
            sn_enabled: false,
            sn_cap: DEFAULT_SN_CAP,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub input: DenseLayer,
    pub blocks: Vec<DenseLayer>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub sn_enabled: bool,
    pub sn_cap: f64,
    /// One state per normalized weight: the input projection first, then each block.
    pub sn_states: Vec<PowerIterState>,
    #[serde(default)]
    generation: u64,
}

/// Activations recorded by `forward` for the matching `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    x: DenseVector,
    /// Input to each residual block.
    block_inputs: Vec<DenseVector>,
    /// Unmasked activation output of each block.
    acts: Vec<DenseVector>,
    /// Scaled dropout mask per block, when one was drawn.
    masks: Vec<Option<DenseVector>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    /// Input projection first, then each block, matching `Backbone::layers`.
    pub layers: Vec<LayerGrad>,
    pub input: DenseVector,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden_dim == 0 {
            return invalid("backbone dimensions must be >= 1");
        }
        if !(0.0..1.0).contains(&cfg.dropout_rate) {
            return invalid(format!(
                "dropout rate must lie in [0, 1), got {}",
                cfg.dropout_rate
            ));
        }
        if cfg.sn_enabled && !(cfg.sn_cap > 0.0) {
            return invalid("spectral-norm cap must be positive");
        }
        let input = init_layer(cfg.hidden_dim, cfg.input_dim, derive_seed(seed, 0));
        let blocks = (0..cfg.depth)
            .map(|k| {
                init_layer(
                    cfg.hidden_dim,
                    cfg.hidden_dim,
                    derive_seed(seed, k as u64 + 1),
                )
            })
            .collect();
        let sn_states = (0..=cfg.depth)
            .map(|k| PowerIterState::seeded(cfg.hidden_dim, derive_seed(seed, 1000 + k as u64)))
            .collect();
        let mut backbone = Self {
            input,
            blocks,
            activation: cfg.activation,
            dropout_rate: cfg.dropout_rate,
            sn_enabled: cfg.sn_enabled,
            sn_cap: cfg.sn_cap,
            sn_states,
            generation: 0,
        };
        if cfg.sn_enabled {
            backbone.normalize(cfg.sn_cap, INIT_SN_ITERS)?;
        }
        Ok(backbone)
    }

    pub fn input_dim(&self) -> usize {
        self.input.weight.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.weight.nrows()
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        std::iter::once(&self.input).chain(self.blocks.iter())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    /// Mutable parameter slices in `layers()` order, weight then bias.
    /// Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::with_capacity(2 * (self.blocks.len() + 1));
        for layer in std::iter::once(&mut self.input).chain(self.blocks.iter_mut()) {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn forward(
        &self,
        x: &DenseVector,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(DenseVector, ForwardCache)> {
        check_dim("backbone input", self.input_dim(), x.len())?;
        if !all_finite(x.as_slice()) {
            return invalid("non-finite backbone input");
        }
        let mut h = &self.input.weight * x + &self.input.bias;
        let depth = self.blocks.len();
        let mut block_inputs = Vec::with_capacity(depth);
        let mut acts = Vec::with_capacity(depth);
        let mut masks = Vec::with_capacity(depth);
        let drop = mode == Mode::Train && self.dropout_rate > 0.0;
        let mut mask_rng = rng(dropout_seed);
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);

        for block in &self.blocks {
            let mut a = &block.weight * &h + &block.bias;
            let act = self.activation;
            a.apply(|z| *z = act.apply(*z));
            block_inputs.push(h.clone());
            if drop {
                let rate = self.dropout_rate;
                let mask = DenseVector::from_fn(a.len(), |_, _| {
                    if mask_rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep_scale
                    }
                });
                h += a.component_mul(&mask);
                masks.push(Some(mask));
            } else {
                h += &a;
                masks.push(None);
            }
            acts.push(a);
        }

        let cache = ForwardCache {
            generation: self.generation,
            x: x.clone(),
            block_inputs,
            acts,
            masks,
        };
        Ok((h, cache))
    }

    /// Reverse-mode gradients of the cached forward pass for an upstream `grad_h`.
    pub fn backward(&self, cache: &ForwardCache, grad_h: &DenseVector) -> Result<BackboneGrads> {
        if cache.generation != self.generation || cache.acts.len() != self.blocks.len() {
            return Err(Error::InvalidState(
                "forward cache does not match the current backbone parameters".into(),
            ));
        }
        check_dim("backbone output gradient", self.hidden_dim(), grad_h.len())?;

        let mut g = grad_h.clone();
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for k in (0..self.blocks.len()).rev() {
            let mut g_act = match &cache.masks[k] {
                Some(mask) => g.component_mul(mask),
                None => g.clone(),
            };
            let act = self.activation;
            g_act.zip_apply(&cache.acts[k], |gz, a| *gz *= act.slope_from_output(a));
            let weight = &g_act * cache.block_inputs[k].transpose();
            g += self.blocks[k].weight.tr_mul(&g_act);
            block_grads.push(LayerGrad {
                weight,
                bias: g_act,
            });
        }
        block_grads.reverse();

        let input_grad = LayerGrad {
            weight: &g * cache.x.transpose(),
            bias: g.clone(),
        };
        let grad_x = self.input.weight.tr_mul(&g);

        let mut layers = Vec::with_capacity(block_grads.len() + 1);
        layers.push(input_grad);
        layers.extend(block_grads);
        Ok(BackboneGrads {
            layers,
            input: grad_x,
        })
    }

    /// One warm-started power iteration and clip per weight.
    pub fn sn_step(&mut self, c: f64) -> Result<()> {
        if !self.sn_enabled {
            return Err(Error::InvalidState(
                "spectral normalization is disabled for this backbone".into(),
            ));
        }
        self.normalize(c, 1)
    }

    fn normalize(&mut self, c: f64, iters: usize) -> Result<()> {
        self.generation += 1;
        let states = std::mem::take(&mut self.sn_states);
        let mut next = Vec::with_capacity(states.len());
        let layers = std::iter::once(&mut self.input).chain(self.blocks.iter_mut());
        for (layer, state) in layers.zip(states) {
            let state = estimate_spectral_norm(&layer.weight, iters, state)?;
            if c < state.sigma_hat {
                layer.weight = apply_spectral_norm(&layer.weight, c, state.sigma_hat)?;
            }
            next.push(state);
        }
        self.sn_states = next;
        Ok(())
    }
}

impl BackboneGrads {
    pub fn zeros_like(b: &Backbone) -> Self {
        Self {
            layers: b
                .layers()
                .map(|l| LayerGrad {
                    weight: DenseMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DenseVector::zeros(l.bias.len()),
                })
                .collect(),
            input: DenseVector::zeros(b.input_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &BackboneGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.input += &other.input;
    }

    /// Gradient slices in the same order as `Backbone::params_mut`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
        self.input *= s;
    }
}

fn init_layer(rows: usize, cols: usize, seed: u64) -> DenseLayer {
    let mut r = rng(seed);
    let dist = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("positive std");
    let mut weight = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            weight[(i, j)] = dist.sample(&mut r);
        }
    }
    DenseLayer {
        weight,
        bias: DenseVector::zeros(rows),
    }
}
