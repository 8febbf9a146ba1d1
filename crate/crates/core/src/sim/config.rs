use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a leave event is scored in `r_ex`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaveReward {
    /// continue = 1, leave = -1
    MinusOne,
    /// continue = 1, leave = 0
    Zero,
}

impl LeaveReward {
    pub fn reward(self, left: bool) -> f64 {
        match (self, left) {
            (_, false) => 1.0,
            (LeaveReward::MinusOne, true) => -1.0,
            (LeaveReward::Zero, true) => 0.0,
        }
    }
}

/// Logistic leave model:
///
/// ```text
/// logit = base + fatigue_weight * fatigue
///       + shown * (ad_offset + relevance_weight * (1 - relevance)
///                  + hidden_cost_weight * hidden_cost
///                  - location_weight * (loc - 1) / L)
///       - quality_weight * (list_quality - 0.5)
/// ```
///
/// `fatigue` counts ads shown over the last `fatigue_window` requests,
/// the current one included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserModel {
    pub base_logit: f64,
    pub fatigue_weight: f64,
    pub ad_offset: f64,
    pub relevance_weight: f64,
    pub hidden_cost_weight: f64,
    pub location_weight: f64,
    pub quality_weight: f64,
    pub fatigue_window: usize,
}

impl Default for UserModel {
    fn default() -> Self {
        Self {
            base_logit: DEFAULT_BASE_LOGIT,
            fatigue_weight: 0.3,
            ad_offset: -1.5,
            relevance_weight: 5.0,
            hidden_cost_weight: 0.8,
            location_weight: 0.6,
            quality_weight: 4.0,
            fatigue_window: 3,
        }
    }
}

/// Fitted by `examples/calibrate_simulator.rs`.
pub const DEFAULT_BASE_LOGIT: f64 = -2.0728;
/// Fitted by `examples/calibrate_simulator.rs`.
pub const DEFAULT_REVENUE_SCALE: f64 = 0.3408;

/// Generative settings of the synthetic session environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Recommendations per request (`L`).
    pub list_len: usize,
    pub candidates_min: usize,
    pub candidates_max: usize,
    /// Ad-free requests that seed the histories.
    pub warmup_requests: usize,
    /// Cap on requests per session, warm-up included.
    pub max_requests: usize,
    pub user: UserModel,
    pub revenue_scale: f64,
    /// Fraction of revenue lost when the ad sits in the last slot instead of the first.
    pub exposure_decay: f64,
    pub leave_reward: LeaveReward,
    pub taste_dim: usize,
    /// Spread of the per-request recommender quality shift.
    pub list_quality_spread: f64,
    /// Correlation between an ad's price and its hidden cost.
    pub price_cost_coupling: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            list_len: 6,
            candidates_min: 5,
            candidates_max: 10,
            warmup_requests: 3,
            max_requests: 60,
            user: UserModel::default(),
            revenue_scale: DEFAULT_REVENUE_SCALE,
            exposure_decay: 0.5,
            leave_reward: LeaveReward::MinusOne,
            taste_dim: 8,
            list_quality_spread: 1.0,
            price_cost_coupling: 0.3,
            seed: 7,
        }
    }
}

impl EnvConfig {
    pub fn locations(&self) -> usize {
        self.list_len + 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Precondition(format!("env.{key}: {msg}")))
        };
        if self.list_len == 0 {
            return bad("list_len", "must be positive");
        }
        if self.candidates_min < 5 || self.candidates_max > 10 || self.candidates_min > self.candidates_max {
            return bad("candidates_min/max", "candidate range must lie within [5, 10]");
        }
        if self.max_requests <= self.warmup_requests {
            return bad("max_requests", "must exceed warmup_requests");
        }
        if self.taste_dim == 0 {
            return bad("taste_dim", "must be positive");
        }
        let u = &self.user;
        let coeffs = [
            u.base_logit,
            u.fatigue_weight,
            u.ad_offset,
            u.relevance_weight,
            u.hidden_cost_weight,
            u.location_weight,
            u.quality_weight,
            self.revenue_scale,
            self.exposure_decay,
            self.list_quality_spread,
            self.price_cost_coupling,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return bad("user", "coefficients must be finite");
        }
        if u.fatigue_weight < 0.0 {
            return bad("user.fatigue_weight", "must be non-negative");
        }
        if self.revenue_scale < 0.0 {
            return bad("revenue_scale", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.exposure_decay) || !(0.0..=1.0).contains(&self.price_cost_coupling) {
            return bad("exposure_decay/price_cost_coupling", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// The logged production policy used to generate training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorPolicyConfig {
    pub insert_probability: f64,
    /// Probability of a uniformly random ad instead of the highest-priced one.
    pub random_ad_probability: f64,
    pub seed: u64,
}

impl Default for BehaviorPolicyConfig {
    fn default() -> Self {
        Self {
            insert_probability: 0.5523,
            random_ad_probability: 0.1,
            seed: 11,
        }
    }
}

impl BehaviorPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.insert_probability) {
            return Err(Error::Precondition("behavior.insert_probability must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.random_ad_probability) {
            return Err(Error::Precondition("behavior.random_ad_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
