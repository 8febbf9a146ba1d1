use rand::Rng;

use crate::error::{Error, Result};
use crate::qnet::AdAction;
use crate::sim::config::BehaviorPolicyConfig;
use crate::sim::env::DecisionPoint;

/// The logged policy: insert with a fixed probability, prefer the
/// highest-priced ad, place it uniformly over `1..=L+1`.
pub fn behavior_action<R: Rng + ?Sized>(
    cfg: &BehaviorPolicyConfig,
    point: &DecisionPoint,
    list_len: usize,
    rng: &mut R,
) -> Result<AdAction> {
    let cands = &point.request.candidates;
    if cands.is_empty() {
        return Err(Error::Precondition("behavior policy needs at least one candidate".into()));
    }
    if rng.random::<f64>() >= cfg.insert_probability {
        return Ok(AdAction::no_ad());
    }
    let idx = if rng.random::<f64>() < cfg.random_ad_probability {
        rng.random_range(0..cands.len())
    } else {
        let mut best = 0;
        let mut best_price = f64::NEG_INFINITY;
        for (i, c) in cands.iter().enumerate() {
            let p = c.get("pricing").unwrap_or(f64::NEG_INFINITY);
            if p > best_price {
                best = i;
                best_price = p;
            }
        }
        best
    };
    let location = rng.random_range(1..=list_len + 1);
    Ok(AdAction::insert(point.candidates[idx].vector(), idx, location))
}
