//! Synthetic short-video session environment, logged behavior policy, and
//! the session log format.

mod behavior;
mod calibrate;
mod config;
mod env;
pub mod log;
mod planted;

pub use behavior::behavior_action;
pub use calibrate::{calibrate, CalibrationFit, CalibrationTargets};
pub use config::{
    BehaviorPolicyConfig, EnvConfig, LeaveReward, UserModel, DEFAULT_BASE_LOGIT, DEFAULT_REVENUE_SCALE,
};
pub use env::{
    session_seed, AdTruth, DecisionPoint, Environment, Request, RequestTruth, Reset, SessionEnv, ShownAd,
    StepOutcome,
};
pub use log::{generate_log, read_log, read_log_file, summarize_behavior, LogSummary, SessionLog, SessionRecord};
pub use planted::{planted_hit_rate, planted_log, PlantedConfig, PlantedEnv, PLANTED_AD_ID};
