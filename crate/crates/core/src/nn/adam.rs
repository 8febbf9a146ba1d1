//! Adam optimizer over any [`Params`] implementor.

use serde::{Deserialize, Serialize};

use super::params::{GradientBundle, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators keyed by parameter block name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub blocks: Vec<MomentBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    pub name: String,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    pub fn new<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let blocks = params
            .params()
            .into_iter()
            .map(|p| MomentBlock {
                name: p.name,
                first: vec![0.0; p.data.len()],
                second: vec![0.0; p.data.len()],
            })
            .collect();
        Self {
            config,
            step: 0,
            blocks,
        }
    }

    /// One Adam update applied in place.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &GradientBundle) -> Result<()> {
        let mut blocks = params.params_mut();
        if blocks.len() != self.blocks.len() {
            return Err(Error::Consistency(format!(
                "optimizer tracks {} blocks, network has {}",
                self.blocks.len(),
                blocks.len()
            )));
        }
        if grads.len() != blocks.len() {
            return Err(Error::Consistency(format!(
                "gradient has {} blocks, network has {}",
                grads.len(),
                blocks.len()
            )));
        }
        for (p, (m, g)) in blocks.iter().zip(self.blocks.iter().zip(grads.entries())) {
            if p.name != m.name || p.data.len() != m.first.len() {
                return Err(Error::Consistency(format!(
                    "optimizer block {} does not match parameter {}",
                    m.name, p.name
                )));
            }
            if g.name != p.name || g.values.len() != p.data.len() {
                return Err(Error::Consistency(format!(
                    "missing gradient for parameter {}",
                    p.name
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (p, (m, g)) in blocks.iter_mut().zip(self.blocks.iter_mut().zip(grads.entries())) {
            for i in 0..p.data.len() {
                let gi = g.values[i];
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * gi;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.first[i] / c1;
                let v_hat = m.second[i] / c2;
                p.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, Matrix};

    fn scalar_layer(w: f64) -> Dense {
        Dense::new(Matrix::from_vec(1, 1, vec![w]), vec![0.0], Activation::Identity).unwrap()
    }

    fn grads_for(layer: &Dense, gw: f64, gb: f64) -> GradientBundle {
        let mut g = layer.clone();
        g.weights_mut().data_mut()[0] = gw;
        g.bias_mut()[0] = gb;
        GradientBundle::from_params(&g)
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut layer = scalar_layer(0.7);
        let mut opt = OptimizerState::new(AdamConfig::default(), &layer);
        opt.blocks[0].first[0] = 0.5;
        opt.blocks[0].second[0] = 0.25;
        let before = layer.clone();
        let g = grads_for(&layer, 0.0, 0.0);
        // first moment is nonzero, so the parameter would move; isolate the
        // no-moment case on the bias block.
        opt.step(&mut layer, &g).unwrap();
        assert_eq!(layer.bias(), before.bias());
        assert_eq!(opt.blocks[0].first[0], 0.9 * 0.5);
        assert_eq!(opt.blocks[0].second[0], 0.999 * 0.25);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn fresh_state_with_zero_gradient_is_a_no_op() {
        let mut layer = scalar_layer(0.7);
        let mut opt = OptimizerState::new(AdamConfig::default(), &layer);
        let g = grads_for(&layer, 0.0, 0.0);
        opt.step(&mut layer, &g).unwrap();
        assert_eq!(layer, scalar_layer(0.7));
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        for &g in &[0.3, -2.5, 1e-3] {
            let mut layer = scalar_layer(1.0);
            let cfg = AdamConfig::default();
            let mut opt = OptimizerState::new(cfg, &layer);
            let grads = grads_for(&layer, g, 0.0);
            opt.step(&mut layer, &grads).unwrap();
            let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((layer.weights().data()[0] - expected).abs() < 1e-15, "g = {g}");
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut layer = scalar_layer(0.2);
            let mut opt = OptimizerState::new(AdamConfig::default(), &layer);
            for k in 0..5 {
                let g = grads_for(&layer, 0.1 * k as f64, -0.3);
                opt.step(&mut layer, &g).unwrap();
            }
            (layer, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_gradient_is_a_consistency_error() {
        let mut layer = scalar_layer(0.2);
        let mut opt = OptimizerState::new(AdamConfig::default(), &layer);
        let full = grads_for(&layer, 1.0, 1.0);
        let partial = GradientBundle::from_entries(full.entries()[..1].to_vec());
        assert!(matches!(
            opt.step(&mut layer, &partial),
            Err(Error::Consistency(_))
        ));
    }
}
