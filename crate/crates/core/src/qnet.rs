//! The Q-network: state plus candidate ad in, one Q-value per location out,
//! with `Q = V(s) + A(s, ad)` for the dueling variants.
//!
//! Location 0 means "do not insert"; locations `1..=L+1` are the slots
//! before, between and after the `L` recommendations.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EncoderTrace, ModelDims, Observation, State, StateEncoder, ITEM_DIM};
use crate::nn::{
    params_join, Activation, Dense, DenseCache, GradientBundle, ParamMut, ParamRef, Params,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// State and ad in, `L+2` dueling outputs.
    Dear,
    /// State in, `L+2` outputs; the ad is ignored.
    ArchA,
    /// State, ad and one-hot location in, one scalar out.
    #[serde(rename = "arch_b_onehot_loc")]
    ArchBOneHotLoc,
    /// Like `Dear` with a single head and no value/advantage split.
    NoDueling,
    /// Like `Dear` with two dense layers in place of each GRU.
    FcnEncoder,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dear,
        Variant::ArchA,
        Variant::ArchBOneHotLoc,
        Variant::NoDueling,
        Variant::FcnEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dear => "dear",
            Variant::ArchA => "arch_a",
            Variant::ArchBOneHotLoc => "arch_b_onehot_loc",
            Variant::NoDueling => "no_dueling",
            Variant::FcnEncoder => "fcn_encoder",
        }
    }

    pub fn is_dueling(self) -> bool {
        matches!(self, Variant::Dear | Variant::FcnEncoder)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown variant `{s}`")))
    }
}

/// A candidate ad (or the all-zero vector) together with a location.
#[derive(Debug, Clone, PartialEq)]
pub struct AdAction {
    pub ad: Vec<f64>,
    pub location: usize,
    /// Index into the offered candidate list; `None` for location 0.
    pub candidate: Option<usize>,
}

impl AdAction {
    pub fn no_ad() -> Self {
        Self {
            ad: vec![0.0; ITEM_DIM],
            location: 0,
            candidate: None,
        }
    }

    pub fn insert(ad: Vec<f64>, candidate: usize, location: usize) -> Self {
        Self {
            ad,
            location,
            candidate: Some(candidate),
        }
    }

    pub fn is_no_ad(&self) -> bool {
        self.location == 0
    }
}

/// Two-layer relu MLP with a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Dense,
    pub out: Dense,
}

type HeadCache = (DenseCache, DenseCache);

impl Head {
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::random(input, hidden, Activation::Relu, rng),
            out: Dense::random(hidden, output, Activation::Identity, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out.output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.out.forward(&self.hidden.forward(x)?)
    }

    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, HeadCache)> {
        let (h, c1) = self.hidden.forward_cached(x)?;
        let (y, c2) = self.out.forward_cached(&h)?;
        Ok((y, (c1, c2)))
    }

    fn backward(&self, cache: &HeadCache, dy: &[f64], grad: &mut Head) -> Result<Vec<f64>> {
        let dh = self
            .out
            .backward(&cache.1, dy, &mut grad.out, true)?
            .expect("input gradient requested");
        Ok(self
            .hidden
            .backward(&cache.0, &dh, &mut grad.hidden, true)?
            .expect("input gradient requested"))
    }
}

impl Params for Head {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.hidden.collect(&params_join(prefix, "hidden"), out);
        self.out.collect(&params_join(prefix, "out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.hidden.collect_mut(&params_join(prefix, "hidden"), out);
        self.out.collect_mut(&params_join(prefix, "out"), out);
    }
}

/// Output of [`QNetwork::variant_forward`].
#[derive(Debug, Clone, PartialEq)]
pub enum VariantOutput {
    Locations(Vec<f64>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    variant: Variant,
    dims: ModelDims,
    mean_centered: bool,
    pub encoder: StateEncoder,
    /// State-only value head (dueling variants only).
    pub value: Option<Head>,
    /// Advantage head for dueling variants, the sole Q head otherwise.
    pub advantage: Head,
}

/// Values saved by a traced forward pass.
#[derive(Debug, Clone)]
pub struct QTrace {
    encoder: EncoderTrace,
    state_width: usize,
    value: Option<HeadCache>,
    head: HeadCache,
}

/// Holds the trace of the most recent forward pass for [`QNetwork::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    trace: Option<QTrace>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_none()
    }

    /// Hash of every relu on/off pattern touched by the recorded pass.
    pub fn relu_signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        if let Some(t) = &self.trace {
            let mut bits = |c: &DenseCache| {
                for v in &c.pre {
                    (*v > 0.0).hash(&mut hasher);
                }
            };
            if let Some(v) = &t.value {
                bits(&v.0);
            }
            bits(&t.head.0);
        }
        hasher.finish()
    }
}

/// Result of a greedy search over candidates and locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: AdAction,
    pub q: f64,
    /// Network evaluations performed.
    pub evaluations: usize,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(variant: Variant, dims: ModelDims, mean_centered: bool, rng: &mut R) -> Self {
        let encoder = match variant {
            Variant::FcnEncoder => StateEncoder::fcn(&dims, rng),
            _ => StateEncoder::gru(&dims, rng),
        };
        let s = dims.state_width();
        let locs = dims.locations();
        let h = dims.head_hidden;
        let (value, advantage) = match variant {
            Variant::Dear | Variant::FcnEncoder => (
                Some(Head::random(s, h, 1, rng)),
                Head::random(s + ITEM_DIM, h, locs, rng),
            ),
            Variant::NoDueling => (None, Head::random(s + ITEM_DIM, h, locs, rng)),
            Variant::ArchA => (None, Head::random(s, h, locs, rng)),
            Variant::ArchBOneHotLoc => (None, Head::random(s + ITEM_DIM + locs, h, 1, rng)),
        };
        Self {
            variant,
            dims,
            mean_centered,
            encoder,
            value,
            advantage,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn mean_centered(&self) -> bool {
        self.mean_centered
    }

    pub fn locations(&self) -> usize {
        self.dims.locations()
    }

    pub fn encode(&self, obs: &Observation) -> Result<State> {
        Ok(self.encoder.encode_traced(obs)?.0)
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        let w = self.encoder.state_width();
        if state.len() != w {
            return Err(Error::shape("state width", w, state.len()));
        }
        Ok(())
    }

    fn check_ad(ad: &[f64]) -> Result<()> {
        if ad.len() != ITEM_DIM {
            return Err(Error::shape("ad width", ITEM_DIM, ad.len()));
        }
        Ok(())
    }

    fn head_input(&self, state: &[f64], ad: &[f64], location: Option<usize>) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut x = Vec::with_capacity(self.advantage.input_dim());
        x.extend_from_slice(state);
        match self.variant {
            Variant::ArchA => {}
            Variant::ArchBOneHotLoc => {
                Self::check_ad(ad)?;
                let loc = location
                    .ok_or_else(|| Error::Contract("arch_b_onehot_loc requires a location".into()))?;
                if loc >= self.locations() {
                    return Err(Error::Contract(format!("location {loc} out of range")));
                }
                x.extend_from_slice(ad);
                let start = x.len();
                x.resize(start + self.locations(), 0.0);
                x[start + loc] = 1.0;
            }
            _ => {
                Self::check_ad(ad)?;
                x.extend_from_slice(ad);
            }
        }
        Ok(x)
    }

    fn combine(&self, v: f64, a: &[f64]) -> Vec<f64> {
        let shift = if self.mean_centered {
            a.iter().sum::<f64>() / a.len() as f64
        } else {
            0.0
        };
        a.iter().map(|x| v + x - shift).collect()
    }

    /// `V(s)`, for dueling variants.
    pub fn state_value(&self, state: &[f64]) -> Result<Option<f64>> {
        self.check_state(state)?;
        match &self.value {
            Some(head) => Ok(Some(head.forward(state)?[0])),
            None => Ok(None),
        }
    }

    /// Raw head output: `A(s, ad)` for dueling variants, Q for single-head ones.
    pub fn advantages(&self, state: &[f64], ad: &[f64]) -> Result<Vec<f64>> {
        if self.variant == Variant::ArchBOneHotLoc {
            return Err(Error::Contract("arch_b_onehot_loc has no per-location head".into()));
        }
        self.advantage.forward(&self.head_input(state, ad, None)?)
    }

    /// The `L+2` Q-values for one candidate ad.
    pub fn q_values(&self, state: &[f64], ad: &[f64]) -> Result<Vec<f64>> {
        let a = self.advantages(state, ad)?;
        match self.state_value(state)? {
            Some(v) => Ok(self.combine(v, &a)),
            None => Ok(a),
        }
    }

    /// Forward pass following each variant's own input contract.
    pub fn variant_forward(&self, state: &[f64], ad: Option<&[f64]>, location: Option<usize>) -> Result<VariantOutput> {
        match self.variant {
            Variant::ArchA => Ok(VariantOutput::Locations(
                self.advantage.forward(&self.head_input(state, &[], None)?)?,
            )),
            Variant::ArchBOneHotLoc => {
                let ad = ad.ok_or_else(|| Error::Contract("arch_b_onehot_loc requires an ad".into()))?;
                let x = self.head_input(state, ad, location)?;
                Ok(VariantOutput::Scalar(self.advantage.forward(&x)?[0]))
            }
            _ => {
                let ad = ad.ok_or_else(|| Error::Contract(format!("{} requires an ad", self.variant)))?;
                Ok(VariantOutput::Locations(self.q_values(state, ad)?))
            }
        }
    }

    /// Q-value of a single (ad, location) pair.
    pub fn q_at(&self, state: &[f64], ad: &[f64], location: usize) -> Result<f64> {
        match self.variant {
            Variant::ArchBOneHotLoc => {
                let x = self.head_input(state, ad, Some(location))?;
                Ok(self.advantage.forward(&x)?[0])
            }
            _ => {
                let q = self.q_values(state, ad)?;
                q.get(location)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("location {location} out of range")))
            }
        }
    }

    /// Greedy (ad, location) over all candidates. Ties go to the lowest
    /// candidate index, then the lowest location.
    pub fn greedy<S: AsRef<[f64]>>(&self, state: &[f64], candidates: &[S]) -> Result<Selection> {
        if candidates.is_empty() {
            return Err(Error::Precondition("empty candidate set".into()));
        }
        let mut best: Option<(f64, usize, usize)> = None;
        let mut consider = |q: f64, i: usize, l: usize| {
            if best.is_none_or(|(b, _, _)| q > b) {
                best = Some((q, i, l));
            }
        };
        let mut evaluations = 0;
        match self.variant {
            Variant::ArchA => {
                let q = self.advantage.forward(&self.head_input(state, &[], None)?)?;
                evaluations += 1;
                for (l, v) in q.iter().enumerate() {
                    consider(*v, 0, l);
                }
            }
            Variant::ArchBOneHotLoc => {
                for (i, ad) in candidates.iter().enumerate() {
                    for l in 0..self.locations() {
                        let x = self.head_input(state, ad.as_ref(), Some(l))?;
                        let q = self.advantage.forward(&x)?[0];
                        evaluations += 1;
                        consider(q, i, l);
                    }
                }
            }
            _ => {
                let v = self.state_value(state)?;
                for (i, ad) in candidates.iter().enumerate() {
                    let a = self.advantage.forward(&self.head_input(state, ad.as_ref(), None)?)?;
                    evaluations += 1;
                    let q = match v {
                        Some(v) => self.combine(v, &a),
                        None => a,
                    };
                    for (l, qv) in q.iter().enumerate() {
                        consider(*qv, i, l);
                    }
                }
            }
        }
        let (q, i, l) = best.expect("at least one candidate evaluated");
        if !q.is_finite() {
            return Err(Error::NonFinite(format!("greedy Q-value {q}")));
        }
        let action = if l == 0 {
            AdAction::no_ad()
        } else {
            AdAction::insert(candidates[i].as_ref().to_vec(), i, l)
        };
        Ok(Selection {
            action,
            q,
            evaluations,
        })
    }

    /// Encodes the observation, then selects greedily.
    pub fn greedy_action<S: AsRef<[f64]>>(&self, obs: &Observation, candidates: &[S]) -> Result<Selection> {
        let state = self.encode(obs)?;
        self.greedy(state.vector(), candidates)
    }

    /// Traced forward pass; the output is the `L+2` vector, or a single
    /// value for `arch_b_onehot_loc` (which needs `location`).
    pub fn forward_tape(
        &self,
        obs: &Observation,
        ad: &[f64],
        location: Option<usize>,
        tape: &mut Tape,
    ) -> Result<Vec<f64>> {
        let (state, encoder) = self.encoder.encode_traced(obs)?;
        let x = self.head_input(state.vector(), ad, location)?;
        let (head_out, head) = self.advantage.forward_cached(&x)?;
        let (out, value) = match &self.value {
            Some(vh) => {
                let (v, cache) = vh.forward_cached(state.vector())?;
                (self.combine(v[0], &head_out), Some(cache))
            }
            None => (head_out, None),
        };
        tape.trace = Some(QTrace {
            encoder,
            state_width: state.width(),
            value,
            head,
        });
        Ok(out)
    }

    /// Accumulates `d(sum upstream * output)/d(theta)` into `grads`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut QNetwork) -> Result<()> {
        let trace = tape
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before a forward pass".into()))?;
        let out_dim = self.advantage.output_dim();
        if upstream.len() != out_dim {
            return Err(Error::shape("Q upstream gradient", out_dim, upstream.len()));
        }
        let mut d_state = vec![0.0; trace.state_width];
        let d_head: Vec<f64> = if self.value.is_some() && self.mean_centered {
            let mean = upstream.iter().sum::<f64>() / upstream.len() as f64;
            upstream.iter().map(|g| g - mean).collect()
        } else {
            upstream.to_vec()
        };
        let dx = self.advantage.backward(&trace.head, &d_head, &mut grads.advantage)?;
        for (d, g) in d_state.iter_mut().zip(&dx) {
            *d += g;
        }
        if let (Some(vh), Some(cache)) = (&self.value, &trace.value) {
            let dv = [upstream.iter().sum::<f64>()];
            let gv = grads
                .value
                .as_mut()
                .ok_or_else(|| Error::Consistency("gradient network lacks a value head".into()))?;
            let dxs = vh.backward(cache, &dv, gv)?;
            for (d, g) in d_state.iter_mut().zip(&dxs) {
                *d += g;
            }
        }
        self.encoder.backward(&trace.encoder, &d_state, &mut grads.encoder)
    }

    /// Zeroed network with the same layout, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_all();
        z
    }

    /// Gradient of `sum(upstream * output)` for the pass recorded on `tape`.
    pub fn gradients(&self, tape: &Tape, upstream: &[f64]) -> Result<GradientBundle> {
        let mut acc = self.zeros_like();
        self.backward(tape, upstream, &mut acc)?;
        Ok(GradientBundle::from_params(&acc))
    }

    /// True if both networks share variant, widths and parameter layout.
    pub fn same_architecture(&self, other: &QNetwork) -> bool {
        self.variant == other.variant
            && self.dims == other.dims
            && self.mean_centered == other.mean_centered
            && self
                .params()
                .iter()
                .zip(other.params().iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
            && self.params().len() == other.params().len()
    }
}

impl Params for QNetwork {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.encoder.collect(&params_join(prefix, "encoder"), out);
        if let Some(v) = &self.value {
            v.collect(&params_join(prefix, "value"), out);
        }
        let name = if self.variant.is_dueling() { "advantage" } else { "q" };
        self.advantage.collect(&params_join(prefix, name), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.encoder.collect_mut(&params_join(prefix, "encoder"), out);
        if let Some(v) = &mut self.value {
            v.collect_mut(&params_join(prefix, "value"), out);
        }
        let name = if self.variant.is_dueling() { "advantage" } else { "q" };
        self.advantage.collect_mut(&params_join(prefix, name), out);
    }
}
