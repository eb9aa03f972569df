use gpf_core::data::gen_classification;
use gpf_core::featurizer::Mode;
use gpf_core::gp_head::{GpHeadState, PrecisionMode};
use gpf_core::losses::{focal_loss, focal_loss_grad};
use gpf_core::trainer::{train, TrainConfig, Variant};
use gpf_core::{DenseVector, Error, Result};

pub const FIELD_EXAMPLES: usize = 300;

/// Compares a fixed point with points along one axis, so the noise at small
/// `rff_dim` is visible.
pub fn kernel_curve(
    rff_dim: usize,
    seed: u64,
    max_distance: f64,
    points: usize,
) -> Result<Vec<f64>> {
    if points < 2 || !(max_distance > 0.0) {
        return Err(Error::InvalidInput(
            "need at least 2 points and a positive distance".into(),
        ));
    }
    let head = GpHeadState::new(2, rff_dim, 0.99, PrecisionMode::Exact, seed)?;
    let origin = head.rff_features(&DenseVector::zeros(2))?;
    let mut out = Vec::with_capacity(points * 3);
    for i in 0..points {
        let d = max_distance * i as f64 / (points - 1) as f64;
        let phi = head.rff_features(&DenseVector::from_vec(vec![d, 0.0]))?;
        out.extend([d, (-d * d / 2.0).exp(), origin.dot(&phi)]);
    }
    Ok(out)
}

pub fn focal_curves(gammas: &[f64], points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let mut out = Vec::with_capacity(gammas.len() * points * 3);
    for &g in gammas {
        for i in 0..points {
            let p = 0.01 + 0.98 * i as f64 / (points - 1) as f64;
            let logit = (p / (1.0 - p)).ln();
            out.extend([p, focal_loss(p, g)?, focal_loss_grad(logit, 1, g)]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Field {
    pub size: usize,
    pub extent: f64,
    pub prob: Vec<f64>,
    pub variance: Vec<f64>,
    pub points: Vec<f64>,
}

pub fn uncertainty_field(separation: f64, seed: u64, size: usize, extent: f64) -> Result<Field> {
    if size < 2 || !(extent > 0.0) {
        return Err(Error::InvalidInput(
            "grid needs size >= 2 and a positive extent".into(),
        ));
    }
    let data = gen_classification(FIELD_EXAMPLES, 2, separation, seed)?;
    let cfg = TrainConfig {
        variant: Variant::Gpf,
        hidden_dim: 16,
        depth: 2,
        rff_dim: 128,
        epochs: 8,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &data, seed)?;
    let net = &model.members[0].network;
    let gp = net
        .gp_head()
        .ok_or_else(|| Error::InvalidState("model has no GP head".into()))?;

    let mut prob = Vec::with_capacity(size * size);
    let mut variance = Vec::with_capacity(size * size);
    let step = 2.0 * extent / (size - 1) as f64;
    for row in 0..size {
        let y = extent - row as f64 * step;
        for col in 0..size {
            let x = -extent + col as f64 * step;
            let h = net.hidden(&DenseVector::from_vec(vec![x, y]), Mode::Eval, 0)?;
            let p = gp.predict(&h)?;
            prob.push(p.prob);
            variance.push(p.variance);
        }
    }
    let points = data
        .examples
        .iter()
        .flat_map(|e| [e.features[0], e.features[1], f64::from(e.label)])
        .collect();
    Ok(Field {
        size,
        extent,
        prob,
        variance,
        points,
    })
}
