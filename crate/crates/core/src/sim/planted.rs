//! Degenerate environment with a single rewarded action, for checking that
//! training finds it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{ContextFeatures, Histories, ItemSchema, RawItem, RecList, AD_FIELDS, NORMAL_FIELDS};
use crate::qnet::{AdAction, QNetwork};
use crate::sim::env::{session_seed, DecisionPoint, Environment, Request, Reset, StepOutcome};
use crate::sim::log::{LogHeader, LoggedRequest, SessionLog, SessionRecord};

pub const PLANTED_AD_ID: u64 = 0x00d1_5ea5_ed00_0001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub list_len: usize,
    pub warmup_requests: usize,
    /// Decisions per session; sessions never end early. With one decision
    /// every transition is terminal and the task is a contextual bandit.
    pub decisions: usize,
    /// Location that pays when the planted ad is shown there.
    pub location: usize,
    pub window: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            list_len: 6,
            warmup_requests: 3,
            decisions: 1,
            location: 3,
            window: 20,
        }
    }
}

/// Every request offers 5 to 10 ads, one of them the planted ad at a random
/// position. Showing it at the planted location earns 1; anything else earns 0.
#[derive(Debug, Clone)]
pub struct PlantedEnv {
    cfg: PlantedConfig,
    normal: ItemSchema,
    ad: ItemSchema,
    rng: ChaCha8Rng,
    histories: Histories,
    requests: usize,
    pending: Option<(DecisionPoint, usize)>,
}

impl PlantedEnv {
    pub fn new(cfg: PlantedConfig) -> Result<Self> {
        if cfg.location == 0 || cfg.location > cfg.list_len + 1 || cfg.decisions == 0 {
            return Err(Error::Precondition("planted location must lie in 1..=L+1".into()));
        }
        Ok(Self {
            cfg,
            normal: ItemSchema::normal(),
            ad: ItemSchema::ad(),
            rng: ChaCha8Rng::seed_from_u64(0),
            histories: Histories::new(cfg.window),
            requests: 0,
            pending: None,
        })
    }

    pub fn config(&self) -> &PlantedConfig {
        &self.cfg
    }

    /// Index of the planted ad in the pending request.
    pub fn planted_index(&self) -> Option<usize> {
        self.pending.as_ref().map(|(_, i)| *i)
    }

    pub fn planted_ad() -> RawItem {
        RawItem::new(PLANTED_AD_ID, AD_FIELDS.iter().map(|f| (f.to_string(), 0.95)))
    }

    fn request(&mut self) -> (Request, usize) {
        let rng = &mut self.rng;
        let context = ContextFeatures::new(rng.random_range(0..2), rng.random_range(0..9), rng.random_range(0..2))
            .expect("context in range");
        let rec_list = (0..self.cfg.list_len)
            .map(|_| RawItem::new(rng.random(), NORMAL_FIELDS.iter().map(|f| (f.to_string(), rng.random::<f64>()))))
            .collect();
        let n = rng.random_range(5..=10usize);
        let planted = rng.random_range(0..n);
        let candidates = (0..n)
            .map(|i| {
                if i == planted {
                    Self::planted_ad()
                } else {
                    // every field stays below the planted ad's top bucket
                    RawItem::new(
                        rng.random::<u64>() | 1 << 63,
                        AD_FIELDS.iter().map(|f| (f.to_string(), rng.random_range(0.0..0.8))),
                    )
                }
            })
            .collect();
        (
            Request {
                t: self.requests,
                context,
                rec_list,
                candidates,
            },
            planted,
        )
    }

    fn encode(&self, req: &Request) -> Result<(RecList, Vec<crate::features::EncodedItem>)> {
        let rec = req.rec_list.iter().map(|r| self.normal.encode(r)).collect::<Result<Vec<_>>>()?;
        let cands = req.candidates.iter().map(|r| self.ad.encode(r)).collect::<Result<Vec<_>>>()?;
        Ok((RecList::new(rec, self.cfg.list_len)?, cands))
    }

    fn next_point(&mut self) -> Result<DecisionPoint> {
        let (req, planted) = self.request();
        let (rec, cands) = self.encode(&req)?;
        let point = DecisionPoint {
            observation: self.histories.observe(req.context, rec),
            candidates: Arc::new(cands),
            request: req,
        };
        self.pending = Some((point.clone(), planted));
        Ok(point)
    }
}

impl Environment for PlantedEnv {
    fn list_len(&self) -> usize {
        self.cfg.list_len
    }

    fn reset(&mut self, seed: u64) -> Result<Reset> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.histories = Histories::new(self.cfg.window);
        self.requests = 0;
        let mut warmup = Vec::new();
        for _ in 0..self.cfg.warmup_requests {
            let (req, _) = self.request();
            let (rec, _) = self.encode(&req)?;
            self.histories.record(&rec, None);
            self.requests += 1;
            warmup.push(req);
        }
        let first = self.next_point()?;
        Ok(Reset { warmup, first })
    }

    fn step(&mut self, action: &AdAction) -> Result<StepOutcome> {
        let (point, planted) = self
            .pending
            .take()
            .ok_or_else(|| Error::State("step called before reset or after terminal".into()))?;
        if action.location > self.cfg.list_len + 1 {
            return Err(Error::Contract(format!("location {} out of range", action.location)));
        }
        let chosen = match (action.location, action.candidate) {
            (0, _) => None,
            (_, Some(i)) if i < point.candidates.len() && point.candidates[i].vector() == action.ad => Some(i),
            _ => return Err(Error::Contract("ad vector is not among the offered candidates".into())),
        };
        let hit = chosen == Some(planted) && action.location == self.cfg.location;
        let (rec, _) = self.encode(&point.request)?;
        self.histories.record(&rec, chosen.map(|i| &point.candidates[i]));
        self.requests += 1;
        let terminal = self.requests >= self.cfg.warmup_requests + self.cfg.decisions;
        let next = if terminal { None } else { Some(self.next_point()?) };
        Ok(StepOutcome {
            r_ad: if hit { 1.0 } else { 0.0 },
            r_ex: 0.0,
            left: false,
            terminal,
            leave_probability: 0.0,
            next,
        })
    }
}

/// Log of `sessions` sessions under a policy uniform over candidates and all
/// `L+2` locations.
pub fn planted_log(cfg: PlantedConfig, sessions: u64, seed: u64) -> Result<SessionLog> {
    let mut env = PlantedEnv::new(cfg)?;
    let l = cfg.list_len;
    let mut out = Vec::with_capacity(sessions as usize);
    for sid in 0..sessions {
        let reset = env.reset(session_seed(seed, sid))?;
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed(seed ^ 0x1065, sid));
        let mut requests = Vec::new();
        for w in &reset.warmup {
            requests.push(LoggedRequest::from_request(w, &AdAction::no_ad(), 0.0, 0.0, false)?);
        }
        let mut point = reset.first;
        loop {
            let loc = rng.random_range(0..=l + 1);
            let action = if loc == 0 {
                AdAction::no_ad()
            } else {
                let i = rng.random_range(0..point.candidates.len());
                AdAction::insert(point.candidates[i].vector(), i, loc)
            };
            let o = env.step(&action)?;
            requests.push(LoggedRequest::from_request(&point.request, &action, o.r_ad, o.r_ex, o.terminal)?);
            match o.next {
                Some(n) => point = n,
                None => break,
            }
        }
        out.push(SessionRecord { session_id: sid, requests });
    }
    Ok(SessionLog {
        header: LogHeader {
            list_len: l,
            warmup: cfg.warmup_requests,
        },
        sessions: out,
        malformed_lines: 0,
        dropped_sessions: 0,
    })
}

/// Fraction of decisions over `sessions` fresh sessions where the network's
/// greedy choice is the planted ad at the planted location.
pub fn planted_hit_rate(net: &QNetwork, cfg: PlantedConfig, sessions: u64, seed: u64) -> Result<f64> {
    let mut env = PlantedEnv::new(cfg)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for sid in 0..sessions {
        let mut point = env.reset(session_seed(seed, sid))?.first;
        loop {
            let k = env.planted_index().expect("pending decision");
            let sel = net.greedy_action(&point.observation, &point.candidate_vectors())?;
            total += 1;
            if sel.action.candidate == Some(k) && sel.action.location == cfg.location {
                hits += 1;
            }
            match env.step(&sel.action)?.next {
                Some(n) => point = n,
                None => break,
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_the_planted_action_pays() {
        let mut env = PlantedEnv::new(PlantedConfig::default()).unwrap();
        let p = env.reset(3).unwrap().first;
        let k = env.planted_index().unwrap();
        let mut twin = env.clone();
        let hit = env.step(&AdAction::insert(p.candidates[k].vector(), k, 3)).unwrap();
        assert_eq!(hit.r_ad, 1.0);
        let other = (k + 1) % p.candidates.len();
        let miss = twin.step(&AdAction::insert(p.candidates[other].vector(), other, 3)).unwrap();
        assert_eq!(miss.r_ad, 0.0);
    }

    #[test]
    fn planted_ad_encoding_is_unique() {
        let mut env = PlantedEnv::new(PlantedConfig::default()).unwrap();
        for s in 0..50 {
            let p = env.reset(s).unwrap().first;
            let k = env.planted_index().unwrap();
            let v = p.candidates[k].vector();
            for (i, c) in p.candidates.iter().enumerate() {
                assert_eq!(i == k, c.vector() == v);
            }
        }
    }

    #[test]
    fn log_has_fixed_length_sessions() {
        let log = planted_log(PlantedConfig::default(), 20, 1).unwrap();
        for s in &log.sessions {
            s.validate(3, 6).unwrap();
            assert_eq!(s.requests.len(), 4);
        }
    }
}
