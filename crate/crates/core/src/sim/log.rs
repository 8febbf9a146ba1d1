//! Line-delimited session log.
//!
//! ```text
//! #dear-session-log v1 L=6 warmup=3
//! session|t|os,version,feed|items|candidates|action|r_ad|r_ex|terminal
//! ```
//!
//! Items are `id:v1,..,v5` joined by `;`, with values in schema field order.
//! `action` is `-` for no ad, else `candidate@location`. The first `warmup`
//! rows of every session seed the histories and carry no decision.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{ContextFeatures, RawItem, AD_FIELDS, NORMAL_FIELDS};
use crate::qnet::AdAction;
use crate::sim::behavior::behavior_action;
use crate::sim::config::BehaviorPolicyConfig;
use crate::sim::env::{session_seed, Environment, Request, SessionEnv};

pub const LOG_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#dear-session-log v1";
/// Abort reading when more than this fraction of lines is malformed.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Raw features of one logged item, in schema field order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedItem {
    pub id: u64,
    pub values: [f64; 5],
}

impl LoggedItem {
    fn from_raw(raw: &RawItem, fields: &[&str; 5]) -> Result<Self> {
        let mut values = [0.0; 5];
        for (v, f) in values.iter_mut().zip(fields) {
            *v = raw
                .get(f)
                .ok_or_else(|| Error::Schema(format!("missing field `{f}`")))?;
        }
        Ok(Self { id: raw.id, values })
    }

    fn to_raw(self, fields: &[&str; 5]) -> RawItem {
        RawItem::new(self.id, fields.iter().zip(self.values).map(|(f, v)| (f.to_string(), v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub t: usize,
    pub context: ContextFeatures,
    pub rec_list: Vec<LoggedItem>,
    pub candidates: Vec<LoggedItem>,
    /// `(candidate, location)`; `None` means location 0.
    pub action: Option<(usize, usize)>,
    pub r_ad: f64,
    pub r_ex: f64,
    pub terminal: bool,
}

impl LoggedRequest {
    pub(crate) fn from_request(req: &Request, action: &AdAction, r_ad: f64, r_ex: f64, terminal: bool) -> Result<Self> {
        let rec_list = req
            .rec_list
            .iter()
            .map(|r| LoggedItem::from_raw(r, &NORMAL_FIELDS))
            .collect::<Result<_>>()?;
        let candidates = req
            .candidates
            .iter()
            .map(|r| LoggedItem::from_raw(r, &AD_FIELDS))
            .collect::<Result<_>>()?;
        let action = match (action.location, action.candidate) {
            (0, _) => None,
            (loc, Some(c)) => Some((c, loc)),
            (_, None) => return Err(Error::Contract("logged ad action without a candidate index".into())),
        };
        Ok(Self {
            t: req.t,
            context: req.context,
            rec_list,
            candidates,
            action,
            r_ad,
            r_ex,
            terminal,
        })
    }

    pub fn raw_rec_list(&self) -> Vec<RawItem> {
        self.rec_list.iter().map(|i| i.to_raw(&NORMAL_FIELDS)).collect()
    }

    pub fn raw_candidates(&self) -> Vec<RawItem> {
        self.candidates.iter().map(|i| i.to_raw(&AD_FIELDS)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: u64,
    /// Warm-up rows first, then one row per decision.
    pub requests: Vec<LoggedRequest>,
}

impl SessionRecord {
    pub fn decisions(&self, warmup: usize) -> &[LoggedRequest] {
        &self.requests[warmup.min(self.requests.len())..]
    }

    pub fn videos(&self) -> usize {
        self.requests
            .iter()
            .map(|r| r.rec_list.len() + usize::from(r.action.is_some()))
            .sum()
    }

    /// Checks row ordering, one terminal on the last row, warm-up rows ad-free.
    pub fn validate(&self, warmup: usize, list_len: usize) -> Result<()> {
        let n = self.requests.len();
        if n <= warmup {
            return Err(Error::Data(format!("session {}: no decision rows", self.session_id)));
        }
        for (i, r) in self.requests.iter().enumerate() {
            let ctx = |m: &str| Error::Data(format!("session {} row {i}: {m}", self.session_id));
            if r.t != i {
                return Err(ctx("out-of-order request index"));
            }
            if r.rec_list.len() != list_len {
                return Err(ctx("wrong rec-list length"));
            }
            if r.terminal != (i + 1 == n) {
                return Err(ctx("terminal flag not on the last row only"));
            }
            if i < warmup && (r.action.is_some() || r.terminal) {
                return Err(ctx("warm-up row carries a decision"));
            }
            if i >= warmup && r.candidates.is_empty() {
                return Err(ctx("decision row without candidates"));
            }
            if let Some((c, loc)) = r.action {
                if c >= r.candidates.len() || loc == 0 || loc > list_len + 1 {
                    return Err(ctx("action out of range"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogHeader {
    pub list_len: usize,
    pub warmup: usize,
}

impl LogHeader {
    pub fn render(&self) -> String {
        format!("{MAGIC} L={} warmup={}", self.list_len, self.warmup)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Data(format!("not a session log header: `{line}`")))?;
        let mut list_len = None;
        let mut warmup = None;
        for tok in rest.split_whitespace() {
            match tok.split_once('=') {
                Some(("L", v)) => list_len = v.parse().ok(),
                Some(("warmup", v)) => warmup = v.parse().ok(),
                _ => return Err(Error::Data(format!("unknown header token `{tok}`"))),
            }
        }
        match (list_len, warmup) {
            (Some(list_len), Some(warmup)) => Ok(Self { list_len, warmup }),
            _ => Err(Error::Data("header lacks L or warmup".into())),
        }
    }
}

fn write_items(out: &mut String, items: &[LoggedItem]) {
    use std::fmt::Write as _;
    for (k, it) in items.iter().enumerate() {
        if k > 0 {
            out.push(';');
        }
        let _ = write!(out, "{}:", it.id);
        for (j, v) in it.values.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
    }
}

pub fn render_row(session_id: u64, r: &LoggedRequest) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(1024);
    let c = r.context;
    let _ = write!(s, "{session_id}|{}|{},{},{}|", r.t, c.os, c.app_version, c.feed);
    write_items(&mut s, &r.rec_list);
    s.push('|');
    write_items(&mut s, &r.candidates);
    s.push('|');
    match r.action {
        None => s.push('-'),
        Some((c, loc)) => {
            let _ = write!(s, "{c}@{loc}");
        }
    }
    let _ = write!(s, "|{:?}|{:?}|{}", r.r_ad, r.r_ex, u8::from(r.terminal));
    s
}

fn parse_items(field: &str) -> Option<Vec<LoggedItem>> {
    if field.is_empty() {
        return Some(Vec::new());
    }
    field
        .split(';')
        .map(|item| {
            let (id, vals) = item.split_once(':')?;
            let mut values = [0.0; 5];
            let mut it = vals.split(',');
            for v in values.iter_mut() {
                *v = it.next()?.parse().ok().filter(|x: &f64| x.is_finite())?;
            }
            if it.next().is_some() {
                return None;
            }
            Some(LoggedItem { id: id.parse().ok()?, values })
        })
        .collect()
}

/// Parses one data row into `(session_id, request)`.
pub fn parse_row(line: &str) -> Option<(u64, LoggedRequest)> {
    let f: Vec<&str> = line.split('|').collect();
    if f.len() != 9 {
        return None;
    }
    let session_id = f[0].parse().ok()?;
    let t = f[1].parse().ok()?;
    let mut ctx = f[2].split(',').map(|x| x.parse::<u8>().ok());
    let context = ContextFeatures::new(ctx.next()??, ctx.next()??, ctx.next()??).ok()?;
    if ctx.next().is_some() {
        return None;
    }
    let action = if f[5] == "-" {
        None
    } else {
        let (c, l) = f[5].split_once('@')?;
        Some((c.parse().ok()?, l.parse().ok()?))
    };
    let r_ad: f64 = f[6].parse().ok()?;
    let r_ex: f64 = f[7].parse().ok()?;
    if !r_ad.is_finite() || !r_ex.is_finite() {
        return None;
    }
    let terminal = match f[8] {
        "0" => false,
        "1" => true,
        _ => return None,
    };
    Some((
        session_id,
        LoggedRequest {
            t,
            context,
            rec_list: parse_items(f[3])?,
            candidates: parse_items(f[4])?,
            action,
            r_ad,
            r_ex,
            terminal,
        },
    ))
}

/// Contents of a session log after validation.
#[derive(Debug, Clone)]
pub struct SessionLog {
    pub header: LogHeader,
    pub sessions: Vec<SessionRecord>,
    pub malformed_lines: usize,
    pub dropped_sessions: usize,
}

impl SessionLog {
    pub fn decision_count(&self) -> usize {
        self.sessions.iter().map(|s| s.decisions(self.header.warmup).len()).sum()
    }
}

/// Reads a log. Malformed lines are skipped with a warning and drop their
/// session; more than 1% malformed lines is an error.
pub fn read_log<R: BufRead>(reader: R) -> Result<SessionLog> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Data("empty session log".into()))?
        .map_err(|e| Error::Data(format!("reading log header: {e}")))?;
    let header = LogHeader::parse(header_line.trim_end())?;

    let mut sessions: Vec<SessionRecord> = Vec::new();
    let mut tainted: Vec<bool> = Vec::new();
    let mut total = 0usize;
    let mut malformed = 0usize;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Data(format!("reading log line {}: {e}", n + 2)))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        total += 1;
        match parse_row(line) {
            Some((sid, req)) => {
                if sessions.last().is_none_or(|s| s.session_id != sid) {
                    sessions.push(SessionRecord { session_id: sid, requests: Vec::new() });
                    tainted.push(false);
                }
                if let Some(s) = sessions.last_mut() {
                    s.requests.push(req);
                }
            }
            None => {
                malformed += 1;
                log::warn!("session log line {}: malformed, skipped", n + 2);
                // The broken row belongs to the session being read, if its id parses.
                let sid = line.split('|').next().and_then(|s| s.parse::<u64>().ok());
                match (sid, sessions.last()) {
                    (Some(sid), Some(s)) if s.session_id == sid => {
                        if let Some(t) = tainted.last_mut() {
                            *t = true;
                        }
                    }
                    (Some(sid), _) => {
                        sessions.push(SessionRecord { session_id: sid, requests: Vec::new() });
                        tainted.push(true);
                    }
                    (None, _) => {
                        if let Some(t) = tainted.last_mut() {
                            *t = true;
                        }
                    }
                }
            }
        }
    }
    if total > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Data(format!(
            "{malformed} of {total} log lines malformed (limit {:.0}%)",
            MAX_MALFORMED_FRACTION * 100.0
        )));
    }
    let mut kept = Vec::with_capacity(sessions.len());
    let mut dropped = 0;
    for (s, bad) in sessions.into_iter().zip(tainted) {
        if bad {
            dropped += 1;
            continue;
        }
        match s.validate(header.warmup, header.list_len) {
            Ok(()) => kept.push(s),
            Err(e) => {
                dropped += 1;
                log::warn!("dropping session: {e}");
            }
        }
    }
    Ok(SessionLog {
        header,
        sessions: kept,
        malformed_lines: malformed,
        dropped_sessions: dropped,
    })
}

pub fn read_log_file(path: &Path) -> Result<SessionLog> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(std::io::BufReader::new(f))
}

/// Aggregates of a generated log.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogSummary {
    pub sessions: usize,
    pub decisions: usize,
    pub ads_inserted: usize,
    pub videos: usize,
    pub revenue: f64,
}

impl LogSummary {
    pub fn mean_session_videos(&self) -> f64 {
        self.videos as f64 / self.sessions.max(1) as f64
    }

    pub fn insert_rate(&self) -> f64 {
        self.ads_inserted as f64 / self.decisions.max(1) as f64
    }

    pub fn mean_session_revenue(&self) -> f64 {
        self.revenue / self.sessions.max(1) as f64
    }

    fn add(&mut self, s: &SessionRecord, warmup: usize) {
        self.sessions += 1;
        self.decisions += s.decisions(warmup).len();
        for r in &s.requests {
            self.videos += r.rec_list.len();
            if r.action.is_some() {
                self.ads_inserted += 1;
                self.videos += 1;
            }
            self.revenue += r.r_ad;
        }
    }
}

/// Runs the behavior policy for one session and records it.
pub fn simulate_session(
    env: &mut SessionEnv,
    policy: &BehaviorPolicyConfig,
    session_id: u64,
) -> Result<SessionRecord> {
    let seed = session_seed(env.config().seed, session_id);
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(policy.seed, session_id));
    let reset = env.reset(seed)?;
    let mut requests = Vec::new();
    for w in &reset.warmup {
        requests.push(LoggedRequest::from_request(w, &AdAction::no_ad(), 0.0, 0.0, false)?);
    }
    let mut point = reset.first;
    let list_len = env.list_len();
    loop {
        let action = behavior_action(policy, &point, list_len, &mut rng)?;
        let out = env.step(&action)?;
        requests.push(LoggedRequest::from_request(&point.request, &action, out.r_ad, out.r_ex, out.terminal)?);
        match out.next {
            Some(next) => point = next,
            None => break,
        }
    }
    Ok(SessionRecord { session_id, requests })
}

/// Writes `sessions` behavior-policy sessions; deterministic under the env
/// and policy seeds.
pub fn generate_log<W: Write>(
    env: &mut SessionEnv,
    policy: &BehaviorPolicyConfig,
    sessions: u64,
    out: &mut W,
) -> Result<LogSummary> {
    policy.validate()?;
    let header = LogHeader {
        list_len: env.config().list_len,
        warmup: env.config().warmup_requests,
    };
    let io_err = |sid: u64, e: std::io::Error| Error::Data(format!("writing session {sid}: {e}"));
    writeln!(out, "{}", header.render()).map_err(|e| io_err(0, e))?;
    let mut summary = LogSummary::default();
    for sid in 0..sessions {
        let rec = simulate_session(env, policy, sid)?;
        for r in &rec.requests {
            writeln!(out, "{}", render_row(sid, r)).map_err(|e| io_err(sid, e))?;
        }
        summary.add(&rec, env.config().warmup_requests);
    }
    out.flush().map_err(|e| io_err(sessions, e))?;
    Ok(summary)
}

/// Behavior-policy statistics without writing a log.
pub fn summarize_behavior(env: &mut SessionEnv, policy: &BehaviorPolicyConfig, sessions: u64) -> Result<LogSummary> {
    let mut summary = LogSummary::default();
    for sid in 0..sessions {
        let rec = simulate_session(env, policy, sid)?;
        summary.add(&rec, env.config().warmup_requests);
    }
    Ok(summary)
}
