//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::params::{GradientBundle, Params};
use crate::error::{Error, Result};

/// Loss value plus a signature of the piecewise-linear regions visited.
///
/// Two evaluations with different signatures straddle a relu kink, where
/// central differences do not approximate the derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub signature: u64,
}

impl LossEval {
    pub fn smooth(loss: f64) -> Self {
        Self { loss, signature: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub denominator_floor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.max_rel_error > self.tolerance)
            .map(|b| b.name.as_str())
            .collect()
    }

    pub fn total_checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn total_skipped(&self) -> usize {
        self.blocks.iter().map(|b| b.skipped_kinks).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let status = if b.max_rel_error <= self.tolerance { "ok  " } else { "FAIL" };
            writeln!(
                f,
                "{status} {:<40} n={:<6} kinks={:<3} max_rel={:.3e} max_abs={:.3e}",
                b.name, b.checked, b.skipped_kinks, b.max_rel_error, b.max_abs_error
            )?;
        }
        write!(
            f,
            "{} (max relative error {:.3e}, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

/// Perturbs every parameter of `net` by `±step` and compares the central
/// difference of `loss` against `analytic`.
pub fn finite_diff_check<P, F>(
    net: &P,
    analytic: &GradientBundle,
    cfg: CheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    P: Params + Clone,
    F: FnMut(&P) -> Result<LossEval>,
{
    analytic.check_covers(net)?;
    let base = loss(net)?;
    if !base.loss.is_finite() {
        return Err(Error::NonFinite(format!("base loss is {}", base.loss)));
    }

    let mut work = net.clone();
    let layout: Vec<(String, usize)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.data.len()))
        .collect();

    let mut blocks = Vec::with_capacity(layout.len());
    for (b, (name, len)) in layout.iter().enumerate() {
        let grad = &analytic.entries()[b].values;
        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for i in 0..*len {
            let original = work.params()[b].data[i];
            set(&mut work, b, i, original + cfg.step);
            let plus = loss(&work)?;
            set(&mut work, b, i, original - cfg.step);
            let minus = loss(&work)?;
            set(&mut work, b, i, original);
            if !plus.loss.is_finite() || !minus.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing {name}[{i}]: {} / {}",
                    plus.loss, minus.loss
                )));
            }
            if plus.signature != minus.signature || plus.signature != base.signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let a = grad[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.denominator_floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = i;
            }
            report.max_abs_error = report.max_abs_error.max(abs);
        }
        blocks.push(report);
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        blocks,
    })
}

fn set<P: Params>(net: &mut P, block: usize, index: usize, value: f64) {
    net.params_mut()[block].data[index] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic_setup() -> (Dense, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = Dense::random(3, 2, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = vec![0.3, -0.7];
        (layer, x, target)
    }

    fn quad_loss(layer: &Dense, x: &[f64], target: &[f64]) -> f64 {
        let y = layer.forward(x).unwrap();
        y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn quad_grad(layer: &Dense, x: &[f64], target: &[f64]) -> GradientBundle {
        let (y, cache) = layer.forward_cached(x).unwrap();
        let dy: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
        let mut g = layer.clone();
        g.zero_all();
        layer.backward(&cache, &dy, &mut g, false).unwrap();
        GradientBundle::from_params(&g)
    }

    #[test]
    fn linear_network_quadratic_loss_is_near_exact() {
        let (layer, x, t) = quadratic_setup();
        let grads = quad_grad(&layer, &x, &t);
        let report = finite_diff_check(&layer, &grads, CheckConfig::default(), |l| {
            Ok(LossEval::smooth(quad_loss(l, &x, &t)))
        })
        .unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_error() < 1e-9, "{report}");
    }

    #[test]
    fn corrupted_entry_is_flagged_on_its_block() {
        let (layer, x, t) = quadratic_setup();
        let mut grads = quad_grad(&layer, &x, &t);
        grads.entries_mut()[1].values[0] *= 2.0;
        let report = finite_diff_check(&layer, &grads, CheckConfig::default(), |l| {
            Ok(LossEval::smooth(quad_loss(l, &x, &t)))
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing_blocks(), vec!["bias"]);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let (layer, x, t) = quadratic_setup();
        let grads = quad_grad(&layer, &x, &t);
        let err = finite_diff_check(&layer, &grads, CheckConfig::default(), |_| {
            Ok(LossEval::smooth(f64::NAN))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
