use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{
    mix64, ContextFeatures, EncodedItem, Histories, ItemSchema, Observation, RawItem, RecList, APP_VERSIONS, OS_CHOICES,
};
use crate::nn::linalg::sigmoid;
use crate::qnet::AdAction;
use crate::sim::config::{EnvConfig, UserModel};

/// Raw view of one request, as it would appear in a log.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    /// Request index within the session, warm-up included.
    pub t: usize,
    pub context: ContextFeatures,
    pub rec_list: Vec<RawItem>,
    pub candidates: Vec<RawItem>,
}

/// A request awaiting a decision.
#[derive(Debug, Clone)]
pub struct DecisionPoint {
    pub request: Request,
    pub observation: Arc<Observation>,
    pub candidates: Arc<Vec<EncodedItem>>,
}

impl DecisionPoint {
    pub fn candidate_vectors(&self) -> Vec<Vec<f64>> {
        self.candidates.iter().map(|c| c.vector()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Reset {
    /// Ad-free requests that seeded the histories.
    pub warmup: Vec<Request>,
    pub first: DecisionPoint,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub r_ad: f64,
    pub r_ex: f64,
    pub left: bool,
    pub terminal: bool,
    /// Ground-truth leave probability the user drew from.
    pub leave_probability: f64,
    /// `None` when terminal.
    pub next: Option<DecisionPoint>,
}

/// Ground-truth attributes of a candidate ad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdTruth {
    pub relevance: f64,
    pub hidden_cost: f64,
    pub price: f64,
}

/// Ground truth of the pending request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestTruth {
    pub list_quality: f64,
    pub ads: Vec<AdTruth>,
}

/// The shown ad as seen by the leave model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShownAd {
    pub relevance: f64,
    pub hidden_cost: f64,
    pub location: usize,
}

impl UserModel {
    pub fn leave_logit(&self, fatigue: usize, shown: Option<ShownAd>, list_quality: f64, list_len: usize) -> f64 {
        let mut logit = self.base_logit + self.fatigue_weight * fatigue as f64
            - self.quality_weight * (list_quality - 0.5);
        if let Some(ad) = shown {
            let depth = (ad.location.saturating_sub(1)) as f64 / list_len as f64;
            logit += self.ad_offset + self.relevance_weight * (1.0 - ad.relevance) + self.hidden_cost_weight * ad.hidden_cost
                - self.location_weight * depth;
        }
        logit
    }

    pub fn leave_probability(&self, fatigue: usize, shown: Option<ShownAd>, list_quality: f64, list_len: usize) -> f64 {
        sigmoid(self.leave_logit(fatigue, shown, list_quality, list_len))
    }
}

/// Common interface of the environments the trainer and evaluator drive.
pub trait Environment {
    fn list_len(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Reset>;
    fn step(&mut self, action: &AdAction) -> Result<StepOutcome>;
}

/// Seed of session `index` under a base seed.
pub fn session_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(1)))
}

#[derive(Debug, Clone)]
struct Session {
    taste: Vec<f64>,
    os: u8,
    app_version: u8,
    histories: Histories,
    /// Ad shown at each of the most recent requests, newest last.
    recent_ads: VecDeque<bool>,
    requests: usize,
    pending: Option<(DecisionPoint, RequestTruth)>,
}

/// Synthetic short-video session environment.
#[derive(Debug, Clone)]
pub struct SessionEnv {
    cfg: EnvConfig,
    window: usize,
    normal_schema: ItemSchema,
    ad_schema: ItemSchema,
    rng: ChaCha8Rng,
    next_id: u64,
    session: Option<Session>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| -> f64 { StandardNormal.sample(rng) }).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl SessionEnv {
    pub fn new(cfg: EnvConfig, window: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            window,
            normal_schema: ItemSchema::normal(),
            ad_schema: ItemSchema::ad(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            next_id: 0,
            session: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Ground truth of the pending request, if any.
    pub fn truth(&self) -> Option<&RequestTruth> {
        self.session.as_ref()?.pending.as_ref().map(|(_, t)| t)
    }

    /// Ads shown over the previous `fatigue_window - 1` requests.
    pub fn carried_fatigue(&self) -> usize {
        self.session
            .as_ref()
            .map(|s| s.recent_ads.iter().filter(|&&a| a).count())
            .unwrap_or(0)
    }

    /// Revenue of showing an ad of the given price at `location`.
    pub fn revenue(&self, price: f64, location: usize) -> f64 {
        let depth = (location.saturating_sub(1)) as f64 / self.cfg.list_len as f64;
        self.cfg.revenue_scale * price * (1.0 - self.cfg.exposure_decay * depth)
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        mix64(self.next_id ^ self.rng.random::<u64>())
    }

    fn gen_request(&mut self, taste: &[f64], os: u8, app_version: u8, t: usize) -> Result<(Request, RequestTruth)> {
        let feed = self.rng.random_range(0..2u8);
        let context = ContextFeatures::new(os, app_version, feed)?;
        let offset = Normal::new(0.0, self.cfg.list_quality_spread)
            .map_err(|e| Error::Precondition(e.to_string()))?
            .sample(&mut self.rng);
        let noise = |rng: &mut ChaCha8Rng, sd: f64| -> f64 { let z: f64 = StandardNormal.sample(rng);
            sd * z };
        let mut rec_list = Vec::with_capacity(self.cfg.list_len);
        let mut quality_sum = 0.0;
        for _ in 0..self.cfg.list_len {
            let v = unit_vector(&mut self.rng, self.cfg.taste_dim);
            let affinity = dot(taste, &v) * (self.cfg.taste_dim as f64).sqrt() / 2.0;
            let q = sigmoid(affinity + offset + noise(&mut self.rng, 0.3));
            quality_sum += q;
            let rng = &mut self.rng;
            let feats = [
                ("like", unit01(q + noise(rng, 0.1))),
                ("finish", unit01(q + noise(rng, 0.15))),
                ("comment", unit01(0.5 * q + 0.5 * rng.random::<f64>())),
                ("follow", rng.random::<f64>()),
                ("group", unit01(q + noise(rng, 0.25))),
            ];
            let id = self.fresh_id();
            rec_list.push(RawItem::new(id, feats.iter().map(|(k, v)| (k.to_string(), *v))));
        }
        let n_cand = self.rng.random_range(self.cfg.candidates_min..=self.cfg.candidates_max);
        let mut candidates = Vec::with_capacity(n_cand);
        let mut ads = Vec::with_capacity(n_cand);
        for _ in 0..n_cand {
            let pull = self.rng.random_range(0.0..2.0);
            let g = unit_vector(&mut self.rng, self.cfg.taste_dim);
            let w: Vec<f64> = taste.iter().zip(&g).map(|(u, g)| pull * u + g).collect();
            let wn = dot(&w, &w).sqrt().max(1e-9);
            let relevance = (1.0 + dot(taste, &w) / wn) / 2.0;
            let price: f64 = self.rng.random();
            let c = self.cfg.price_cost_coupling;
            let hidden_cost = unit01(c * price + (1.0 - c) * self.rng.random::<f64>());
            let rng = &mut self.rng;
            let feats = [
                ("image_size", rng.random::<f64>()),
                ("pricing", price),
                ("hidden_cost", unit01(hidden_cost + noise(rng, 0.05))),
                ("rc_preclk", unit01(relevance + noise(rng, 0.05))),
                ("recall_preclk", unit01(relevance + noise(rng, 0.1))),
            ];
            let id = self.fresh_id();
            candidates.push(RawItem::new(id, feats.iter().map(|(k, v)| (k.to_string(), *v))));
            ads.push(AdTruth {
                relevance,
                hidden_cost,
                price,
            });
        }
        let truth = RequestTruth {
            list_quality: quality_sum / self.cfg.list_len as f64,
            ads,
        };
        Ok((
            Request {
                t,
                context,
                rec_list,
                candidates,
            },
            truth,
        ))
    }

    fn encode_request(&self, req: &Request) -> Result<(RecList, Vec<EncodedItem>)> {
        let items = req
            .rec_list
            .iter()
            .map(|r| self.normal_schema.encode(r))
            .collect::<Result<Vec<_>>>()?;
        let cands = req
            .candidates
            .iter()
            .map(|r| self.ad_schema.encode(r))
            .collect::<Result<Vec<_>>>()?;
        Ok((RecList::new(items, self.cfg.list_len)?, cands))
    }

    fn next_decision(&mut self, session: &mut Session) -> Result<()> {
        let (req, truth) = self.gen_request(&session.taste, session.os, session.app_version, session.requests)?;
        let (rec, cands) = self.encode_request(&req)?;
        let observation = session.histories.observe(req.context, rec);
        session.pending = Some((
            DecisionPoint {
                request: req,
                observation,
                candidates: Arc::new(cands),
            },
            truth,
        ));
        Ok(())
    }

    /// Resolves which candidate the action refers to; errors on a foreign ad.
    fn resolve(point: &DecisionPoint, action: &AdAction) -> Result<Option<usize>> {
        if action.location == 0 {
            return Ok(None);
        }
        let matches = |i: usize| {
            let v = point.candidates[i].vector();
            v.len() == action.ad.len() && v.iter().zip(&action.ad).all(|(a, b)| a == b)
        };
        if let Some(i) = action.candidate {
            if i < point.candidates.len() && matches(i) {
                return Ok(Some(i));
            }
            return Err(Error::Contract(format!(
                "ad vector does not match offered candidate {i}"
            )));
        }
        (0..point.candidates.len())
            .find(|&i| matches(i))
            .map(Some)
            .ok_or_else(|| Error::Contract("ad vector is not among the offered candidates".into()))
    }
}

impl Environment for SessionEnv {
    fn list_len(&self) -> usize {
        self.cfg.list_len
    }

    fn reset(&mut self, seed: u64) -> Result<Reset> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.next_id = 0;
        let taste = unit_vector(&mut self.rng, self.cfg.taste_dim);
        let os = self.rng.random_range(0..OS_CHOICES as u8);
        let app_version = self.rng.random_range(0..APP_VERSIONS as u8);
        let mut session = Session {
            taste,
            os,
            app_version,
            histories: Histories::new(self.window),
            recent_ads: VecDeque::new(),
            requests: 0,
            pending: None,
        };
        let mut warmup = Vec::with_capacity(self.cfg.warmup_requests);
        for t in 0..self.cfg.warmup_requests {
            let (req, _) = self.gen_request(&session.taste, os, app_version, t)?;
            let (rec, _) = self.encode_request(&req)?;
            session.histories.record(&rec, None);
            self.push_recent(&mut session, false);
            session.requests += 1;
            warmup.push(req);
        }
        self.next_decision(&mut session)?;
        let first = session.pending.as_ref().map(|(p, _)| p.clone()).ok_or_else(|| {
            Error::State("no pending request after reset".into())
        })?;
        self.session = Some(session);
        Ok(Reset { warmup, first })
    }

    fn step(&mut self, action: &AdAction) -> Result<StepOutcome> {
        let l = self.cfg.list_len;
        if action.location > l + 1 {
            return Err(Error::Contract(format!(
                "location {} outside [0, {}]",
                action.location,
                l + 1
            )));
        }
        let mut session = self
            .session
            .take()
            .ok_or_else(|| Error::State("step called before reset or after terminal".into()))?;
        let Some((point, truth)) = session.pending.take() else {
            return Err(Error::State("step called after terminal".into()));
        };
        let chosen = match Self::resolve(&point, action) {
            Ok(c) => c,
            Err(e) => {
                session.pending = Some((point, truth));
                self.session = Some(session);
                return Err(e);
            }
        };
        let shown = chosen.map(|i| ShownAd {
            relevance: truth.ads[i].relevance,
            hidden_cost: truth.ads[i].hidden_cost,
            location: action.location,
        });
        let fatigue = session.recent_ads.iter().filter(|&&a| a).count() + usize::from(shown.is_some());
        let p_leave = self.cfg.user.leave_probability(fatigue, shown, truth.list_quality, l);
        let left = self.rng.random::<f64>() < p_leave;
        let r_ad = chosen.map_or(0.0, |i| self.revenue(truth.ads[i].price, action.location));
        let r_ex = self.cfg.leave_reward.reward(left);

        session
            .histories
            .record(&point.observation.rec_list, chosen.map(|i| &point.candidates[i]));
        self.push_recent(&mut session, shown.is_some());
        session.requests += 1;
        let terminal = left || session.requests >= self.cfg.max_requests;
        let next = if terminal {
            None
        } else {
            self.next_decision(&mut session)?;
            session.pending.as_ref().map(|(p, _)| p.clone())
        };
        self.session = Some(session);
        Ok(StepOutcome {
            r_ad,
            r_ex,
            left,
            terminal,
            leave_probability: p_leave,
            next,
        })
    }
}

impl SessionEnv {
    fn push_recent(&self, session: &mut Session, shown: bool) {
        session.recent_ads.push_back(shown);
        let keep = self.cfg.user.fatigue_window.saturating_sub(1);
        while session.recent_ads.len() > keep {
            session.recent_ads.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ItemKind;

    fn env() -> SessionEnv {
        SessionEnv::new(EnvConfig::default(), 20).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let a = env().reset(5).unwrap();
        let b = env().reset(5).unwrap();
        assert_eq!(a.first.observation, b.first.observation);
        assert_eq!(a.first.request, b.first.request);
        let c = env().reset(6).unwrap();
        assert_ne!(a.first.request, c.first.request);
    }

    #[test]
    fn warmup_fills_history_without_ads() {
        let r = env().reset(1).unwrap();
        assert_eq!(r.warmup.len(), 3);
        assert_eq!(r.first.observation.rec_history.len(), 18);
        assert!(r.first.observation.ad_history.is_empty());
        assert!(r.first.observation.rec_history.iter().all(|i| i.kind() == ItemKind::Normal));
        assert_eq!(r.first.request.t, 3);
        assert!((5..=10).contains(&r.first.candidates.len()));
    }

    #[test]
    fn no_ad_earns_nothing() {
        let mut e = env();
        e.reset(2).unwrap();
        let out = e.step(&AdAction::no_ad()).unwrap();
        assert_eq!(out.r_ad, 0.0);
        assert!(out.r_ex == 1.0 || out.r_ex == -1.0);
        assert_eq!(out.r_ex == -1.0, out.left);
    }

    #[test]
    fn foreign_ad_is_rejected_and_state_kept() {
        let mut e = env();
        let r = e.reset(3).unwrap();
        let mut bogus = vec![0.0; r.first.candidates[0].vector().len()];
        bogus[0] = 1.0;
        bogus[1] = 1.0;
        let err = e.step(&AdAction { ad: bogus, location: 2, candidate: None });
        assert!(matches!(err, Err(Error::Contract(_))));
        let wrong_index = AdAction::insert(r.first.candidates[0].vector(), 99, 1);
        assert!(matches!(e.step(&wrong_index), Err(Error::Contract(_))));
        let ok = AdAction { ad: r.first.candidates[1].vector(), location: 3, candidate: None };
        let out = e.step(&ok).unwrap();
        assert!(out.r_ad > 0.0);
    }

    #[test]
    fn location_out_of_range() {
        let mut e = env();
        let r = e.reset(4).unwrap();
        let a = AdAction::insert(r.first.candidates[0].vector(), 0, 8);
        assert!(matches!(e.step(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn step_before_reset_fails() {
        assert!(matches!(env().step(&AdAction::no_ad()), Err(Error::State(_))));
    }

    #[test]
    fn leave_mode_zero() {
        let mut cfg = EnvConfig::default();
        cfg.leave_reward = crate::sim::LeaveReward::Zero;
        cfg.user.base_logit = 50.0;
        let mut e = SessionEnv::new(cfg, 20).unwrap();
        e.reset(0).unwrap();
        let out = e.step(&AdAction::no_ad()).unwrap();
        assert!(out.left && out.terminal && out.next.is_none());
        assert_eq!(out.r_ex, 0.0);
        assert!(matches!(e.step(&AdAction::no_ad()), Err(Error::State(_))));
    }

    #[test]
    fn leave_probability_monotone_in_fatigue() {
        let m = UserModel::default();
        let ad = Some(ShownAd { relevance: 0.6, hidden_cost: 0.3, location: 2 });
        for f in 0..6 {
            assert!(m.leave_probability(f + 1, ad, 0.5, 6) > m.leave_probability(f, ad, 0.5, 6));
        }
        assert!(m.leave_probability(0, None, 0.8, 6) < m.leave_probability(0, None, 0.2, 6));
    }

    #[test]
    fn session_hits_request_cap() {
        let mut cfg = EnvConfig::default();
        cfg.user.base_logit = -60.0;
        cfg.max_requests = 8;
        let mut e = SessionEnv::new(cfg, 20).unwrap();
        e.reset(9).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            if e.step(&AdAction::no_ad()).unwrap().terminal {
                break;
            }
        }
        assert_eq!(steps, 5);
    }

    #[test]
    fn clone_replays_identically() {
        let mut e = env();
        let r = e.reset(11).unwrap();
        let mut twin = e.clone();
        let a = AdAction::insert(r.first.candidates[0].vector(), 0, 1);
        let x = e.step(&a).unwrap();
        let y = twin.step(&a).unwrap();
        assert_eq!(x.left, y.left);
        assert_eq!(x.r_ad, y.r_ad);
        assert_eq!(x.next.map(|p| p.request), y.next.map(|p| p.request));
    }
}
