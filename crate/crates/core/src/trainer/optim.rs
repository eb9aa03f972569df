use crate::error::{check_dim, Result};

use super::config::{OptimizerKind, TrainConfig};

/// Plain SGD or bias-corrected Adam over a fixed list of parameter slices.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let adam = cfg.optimizer == OptimizerKind::Adam;
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_dim("optimizer tensors", params.len(), grads.len())?;
        for (p, g) in params.iter().zip(grads) {
            check_dim("optimizer tensor", p.len(), g.len())?;
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.iter_mut().zip(g.iter()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t);
                let bc2 = 1.0 - self.beta2.powi(self.t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        let d = g[i];
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, grads: &[f64]) -> Vec<f64> {
        let cfg = TrainConfig {
            optimizer: kind,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut opt = Optimizer::new(&cfg, &[grads.len()]);
        let mut w = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
            opt.step(&mut params, &[grads]).unwrap();
        }
        w
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        assert_eq!(run(OptimizerKind::Sgd, &[0.0; 3]), vec![1.0, -2.0, 0.5]);
        let adam = run(OptimizerKind::Adam, &[0.0; 3]);
        for (a, b) in adam.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut opt = Optimizer::new(&cfg, &[2]);
        let mut w = vec![0.0, 0.0];
        let mut params: Vec<&mut [f64]> = vec![&mut w[..]];
        opt.step(&mut params, &[&[3.0, -0.5]]).unwrap();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn sgd_step() {
        let w = run(OptimizerKind::Sgd, &[1.0, 0.0, -1.0]);
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[2] - 1.0).abs() < 1e-12);
    }
}
