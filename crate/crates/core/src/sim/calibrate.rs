use crate::error::{Error, Result};
use crate::sim::config::{BehaviorPolicyConfig, EnvConfig};
use crate::sim::env::SessionEnv;
use crate::sim::log::{summarize_behavior, LogSummary};

/// Behavior-policy statistics the simulator is fitted to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub session_videos: f64,
    pub session_revenue: f64,
    pub insert_rate: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            session_videos: 55.03,
            session_revenue: 0.667,
            insert_rate: 0.5523,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationFit {
    pub base_logit: f64,
    pub revenue_scale: f64,
    pub summary: LogSummary,
}

/// Fits the base leave logit by bisection on mean session length, then the
/// revenue scale in closed form (revenue is linear in the scale and does not
/// feed back into the dynamics). Sessions share seeds across evaluations.
pub fn calibrate(
    cfg: EnvConfig,
    policy: &BehaviorPolicyConfig,
    targets: &CalibrationTargets,
    sessions: u64,
    window: usize,
) -> Result<CalibrationFit> {
    let eval = |base: f64| -> Result<LogSummary> {
        let mut c = cfg;
        c.user.base_logit = base;
        summarize_behavior(&mut SessionEnv::new(c, window)?, policy, sessions)
    };
    let (mut lo, mut hi) = (-8.0, 2.0);
    if eval(lo)?.mean_session_videos() < targets.session_videos
        || eval(hi)?.mean_session_videos() > targets.session_videos
    {
        return Err(Error::Precondition("session-length target outside the reachable range".into()));
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)?.mean_session_videos() > targets.session_videos {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-4 {
            break;
        }
    }
    let base_logit = 0.5 * (lo + hi);
    let at_base = eval(base_logit)?;
    if at_base.revenue <= 0.0 {
        return Err(Error::Precondition("behavior policy earns no revenue".into()));
    }
    let revenue_scale = cfg.revenue_scale * targets.session_revenue / at_base.mean_session_revenue();
    let mut fitted = cfg;
    fitted.user.base_logit = base_logit;
    fitted.revenue_scale = revenue_scale;
    let summary = summarize_behavior(&mut SessionEnv::new(fitted, window)?, policy, sessions)?;
    Ok(CalibrationFit {
        base_logit,
        revenue_scale,
        summary,
    })
}
