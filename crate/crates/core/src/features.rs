//! Item schemas, one-hot discretization, and assembly of the decision state
//! `concat(p_rec, p_ad, context, rec)`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, DenseCache, GruCell, GruTrace, ParamMut, ParamRef, Params};

/// Width of every encoded item, normal or ad.
pub const ITEM_DIM: usize = 60;
/// Width of the encoded request context.
pub const CONTEXT_DIM: usize = 13;
pub const OS_CHOICES: usize = 2;
pub const APP_VERSIONS: usize = 9;
pub const FEED_TYPES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Normal,
    Ad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Bucket = mix(id) mod buckets.
    IdHash,
    /// Right-closed buckets over `[lo, hi]`.
    Range { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub buckets: usize,
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSchema {
    pub kind: ItemKind,
    pub segments: Vec<Segment>,
}

pub const NORMAL_FIELDS: [&str; 5] = ["like", "finish", "comment", "follow", "group"];
pub const AD_FIELDS: [&str; 5] = ["image_size", "pricing", "hidden_cost", "rc_preclk", "recall_preclk"];

impl ItemSchema {
    fn with_fields(kind: ItemKind, fields: &[&str], id_buckets: usize, buckets: usize) -> Self {
        let mut segments = vec![Segment {
            name: "id".into(),
            buckets: id_buckets,
            kind: SegmentKind::IdHash,
        }];
        segments.extend(fields.iter().map(|f| Segment {
            name: (*f).into(),
            buckets,
            kind: SegmentKind::Range { lo: 0.0, hi: 1.0 },
        }));
        Self { kind, segments }
    }

    /// id hash (20 buckets) plus five platform scores (8 buckets each).
    pub fn normal() -> Self {
        Self::with_fields(ItemKind::Normal, &NORMAL_FIELDS, 20, 8)
    }

    /// id hash (20 buckets) plus five ad attributes (8 buckets each).
    pub fn ad() -> Self {
        Self::with_fields(ItemKind::Ad, &AD_FIELDS, 20, 8)
    }

    pub fn for_kind(kind: ItemKind) -> Self {
        match kind {
            ItemKind::Normal => Self::normal(),
            ItemKind::Ad => Self::ad(),
        }
    }

    pub fn width(&self) -> usize {
        self.segments.iter().map(|s| s.buckets).sum()
    }

    /// Names of the numeric fields, in segment order.
    pub fn field_names(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| matches!(s.kind, SegmentKind::Range { .. }))
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width() != ITEM_DIM {
            return Err(Error::Schema(format!(
                "{:?} schema width {} != {ITEM_DIM}",
                self.kind,
                self.width()
            )));
        }
        if self.segments.iter().any(|s| s.buckets == 0) {
            return Err(Error::Schema("segment with zero buckets".into()));
        }
        Ok(())
    }

    pub fn encode(&self, raw: &RawItem) -> Result<EncodedItem> {
        encode_item(raw, self, &mut EncodeStats::default())
    }
}

/// Raw (undiscretized) features of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawItem {
    pub id: u64,
    pub features: BTreeMap<String, f64>,
}

impl RawItem {
    pub fn new(id: u64, features: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            id,
            features: features.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.features.get(name).copied()
    }
}

/// One-hot encoded item, stored as the index of the hot entry per segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedItem {
    kind: ItemKind,
    hot: Vec<u16>,
}

impl EncodedItem {
    pub fn kind(&self) -> ItemKind {
        self.kind
    }

    /// Absolute positions of the hot entries.
    pub fn hot_indices(&self) -> &[u16] {
        &self.hot
    }

    pub fn vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; ITEM_DIM];
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut [f64]) {
        for &i in &self.hot {
            out[i as usize] = 1.0;
        }
    }
}

/// Counts of recoverable problems seen while encoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub clamped: u64,
}

/// 64-bit finalizer used for stable id hashing.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Right-closed bucket index: `(lo + k w, lo + (k+1) w]`, with `lo` itself in bucket 0.
pub fn bucket_index(value: f64, lo: f64, hi: f64, buckets: usize) -> (usize, bool) {
    let clamped = !(lo..=hi).contains(&value);
    let v = value.clamp(lo, hi);
    let width = (hi - lo) / buckets as f64;
    let k = ((v - lo) / width).ceil() as isize - 1;
    (k.clamp(0, buckets as isize - 1) as usize, clamped)
}

pub fn encode_item(raw: &RawItem, schema: &ItemSchema, stats: &mut EncodeStats) -> Result<EncodedItem> {
    let mut hot = Vec::with_capacity(schema.segments.len());
    let mut offset = 0usize;
    for seg in &schema.segments {
        let idx = match seg.kind {
            SegmentKind::IdHash => (mix64(raw.id) % seg.buckets as u64) as usize,
            SegmentKind::Range { lo, hi } => {
                let v = raw
                    .get(&seg.name)
                    .ok_or_else(|| Error::Schema(format!("missing field `{}`", seg.name)))?;
                if !v.is_finite() {
                    return Err(Error::Schema(format!("field `{}` is not finite", seg.name)));
                }
                let (k, clamped) = bucket_index(v, lo, hi, seg.buckets);
                if clamped {
                    stats.clamped += 1;
                    log::warn!("field `{}` value {v} outside [{lo}, {hi}], clamped", seg.name);
                }
                k
            }
        };
        hot.push((offset + idx) as u16);
        offset += seg.buckets;
    }
    Ok(EncodedItem {
        kind: schema.kind,
        hot,
    })
}

/// OS, app version and feed direction of the current request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub os: u8,
    pub app_version: u8,
    pub feed: u8,
}

impl ContextFeatures {
    pub fn new(os: u8, app_version: u8, feed: u8) -> Result<Self> {
        if os as usize >= OS_CHOICES || app_version as usize >= APP_VERSIONS || feed as usize >= FEED_TYPES {
            return Err(Error::Schema(format!(
                "context ({os}, {app_version}, {feed}) out of range"
            )));
        }
        Ok(Self { os, app_version, feed })
    }

    pub fn vector(&self) -> [f64; CONTEXT_DIM] {
        let mut v = [0.0; CONTEXT_DIM];
        v[self.os as usize] = 1.0;
        v[OS_CHOICES + self.app_version as usize] = 1.0;
        v[OS_CHOICES + APP_VERSIONS + self.feed as usize] = 1.0;
        v
    }
}

/// The `L` normal items of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecList {
    items: Vec<EncodedItem>,
}

impl RecList {
    pub fn new(items: Vec<EncodedItem>, list_len: usize) -> Result<Self> {
        if items.len() != list_len {
            return Err(Error::shape("rec-list length", list_len, items.len()));
        }
        if items.iter().any(|i| i.kind != ItemKind::Normal) {
            return Err(Error::Schema("rec-list contains an ad".into()));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[EncodedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn concat_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.items.len() * ITEM_DIM];
        for (k, item) in self.items.iter().enumerate() {
            item.write_into(&mut v[k * ITEM_DIM..(k + 1) * ITEM_DIM]);
        }
        v
    }
}

/// Raw inputs of the state at one request: browsing histories (most recent
/// last, already cut to the window), context, and the current rec-list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub rec_history: Vec<EncodedItem>,
    pub ad_history: Vec<EncodedItem>,
    pub context: ContextFeatures,
    pub rec_list: RecList,
}

/// Browsing histories of one session, cut to a fixed window.
#[derive(Debug, Clone, PartialEq)]
pub struct Histories {
    window: usize,
    rec: VecDeque<EncodedItem>,
    ad: VecDeque<EncodedItem>,
}

impl Histories {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            rec: VecDeque::with_capacity(window + 8),
            ad: VecDeque::with_capacity(window + 1),
        }
    }

    /// Adds the items browsed at one request.
    pub fn record(&mut self, rec_list: &RecList, ad: Option<&EncodedItem>) {
        for item in rec_list.items() {
            self.rec.push_back(item.clone());
        }
        while self.rec.len() > self.window {
            self.rec.pop_front();
        }
        if let Some(ad) = ad {
            self.ad.push_back(ad.clone());
            while self.ad.len() > self.window {
                self.ad.pop_front();
            }
        }
    }

    pub fn rec_len(&self) -> usize {
        self.rec.len()
    }

    pub fn ad_len(&self) -> usize {
        self.ad.len()
    }

    pub fn observe(&self, context: ContextFeatures, rec_list: RecList) -> Arc<Observation> {
        Arc::new(Observation {
            rec_history: self.rec.iter().cloned().collect(),
            ad_history: self.ad.iter().cloned().collect(),
            context,
            rec_list,
        })
    }
}

/// Item with uniform random feature values.
pub fn random_raw_item<R: Rng + ?Sized>(kind: ItemKind, rng: &mut R) -> RawItem {
    let fields: &[&str] = match kind {
        ItemKind::Normal => &NORMAL_FIELDS,
        ItemKind::Ad => &AD_FIELDS,
    };
    RawItem::new(rng.random(), fields.iter().map(|f| (f.to_string(), rng.random::<f64>())))
}

pub fn random_item<R: Rng + ?Sized>(kind: ItemKind, rng: &mut R) -> EncodedItem {
    ItemSchema::for_kind(kind)
        .encode(&random_raw_item(kind, rng))
        .expect("random items satisfy the schema")
}

/// Observation with random items, histories of the given lengths and a random context.
pub fn random_observation<R: Rng + ?Sized>(rng: &mut R, list_len: usize, rec_hist: usize, ad_hist: usize) -> Observation {
    let rec_history = (0..rec_hist).map(|_| random_item(ItemKind::Normal, rng)).collect();
    let ad_history = (0..ad_hist).map(|_| random_item(ItemKind::Ad, rng)).collect();
    let list = (0..list_len).map(|_| random_item(ItemKind::Normal, rng)).collect();
    let context = ContextFeatures::new(
        rng.random_range(0..OS_CHOICES as u8),
        rng.random_range(0..APP_VERSIONS as u8),
        rng.random_range(0..FEED_TYPES as u8),
    )
    .expect("context drawn in range");
    Observation {
        rec_history,
        ad_history,
        context,
        rec_list: RecList::new(list, list_len).expect("rec-list built with list_len normal items"),
    }
}

/// Layer widths of the state encoder and Q heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub list_len: usize,
    /// Width of `p_rec` and `p_ad`.
    pub history_hidden: usize,
    /// Width of the projected rec-list `rec_t`.
    pub rec_width: usize,
    pub head_hidden: usize,
    /// Most recent items per kind fed to the history encoders.
    pub window: usize,
}

impl ModelDims {
    /// 64 / 64 / 13 / 360 state layout with 128-wide heads.
    pub fn full() -> Self {
        Self {
            list_len: 6,
            history_hidden: 64,
            rec_width: 360,
            head_hidden: 128,
            window: 20,
        }
    }

    /// Full widths divided by eight (item and context encodings keep their size).
    pub fn eighth() -> Self {
        Self {
            list_len: 6,
            history_hidden: 8,
            rec_width: 45,
            head_hidden: 16,
            window: 20,
        }
    }

    pub fn locations(&self) -> usize {
        self.list_len + 2
    }

    pub fn state_width(&self) -> usize {
        2 * self.history_hidden + CONTEXT_DIM + self.rec_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("list_len", self.list_len),
            ("history_hidden", self.history_hidden),
            ("rec_width", self.rec_width),
            ("head_hidden", self.head_hidden),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Precondition(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Encodes one browsing history into a fixed-width preference vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HistoryEncoder {
    Gru(GruCell),
    /// Two tanh layers over the left-zero-padded concatenation of the window.
    Fcn {
        window: usize,
        first: Dense,
        second: Dense,
    },
}

#[derive(Debug, Clone)]
pub enum HistoryTrace {
    Gru(GruTrace),
    Fcn(DenseCache, DenseCache),
}

impl HistoryEncoder {
    pub fn gru<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        HistoryEncoder::Gru(GruCell::random(ITEM_DIM, hidden, rng))
    }

    pub fn fcn<R: Rng + ?Sized>(window: usize, hidden: usize, rng: &mut R) -> Self {
        HistoryEncoder::Fcn {
            window,
            first: Dense::random(window * ITEM_DIM, hidden, Activation::Tanh, rng),
            second: Dense::random(hidden, hidden, Activation::Tanh, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            HistoryEncoder::Gru(cell) => cell.hidden(),
            HistoryEncoder::Fcn { second, .. } => second.output_dim(),
        }
    }

    fn padded_window(window: usize, items: &[EncodedItem]) -> Vec<f64> {
        let mut x = vec![0.0; window * ITEM_DIM];
        let take = items.len().min(window);
        let start_slot = window - take;
        for (k, item) in items[items.len() - take..].iter().enumerate() {
            let slot = start_slot + k;
            item.write_into(&mut x[slot * ITEM_DIM..(slot + 1) * ITEM_DIM]);
        }
        x
    }

    pub fn encode_traced(&self, items: &[EncodedItem]) -> Result<(Vec<f64>, HistoryTrace)> {
        match self {
            HistoryEncoder::Gru(cell) => {
                let seq: Vec<Vec<f64>> = items.iter().map(EncodedItem::vector).collect();
                let (h, trace) = cell.encode_cached(&seq, &vec![0.0; cell.hidden()])?;
                Ok((h, HistoryTrace::Gru(trace)))
            }
            HistoryEncoder::Fcn { window, first, second } => {
                let x = Self::padded_window(*window, items);
                let (a, c1) = first.forward_cached(&x)?;
                let (b, c2) = second.forward_cached(&a)?;
                Ok((b, HistoryTrace::Fcn(c1, c2)))
            }
        }
    }

    pub fn encode(&self, items: &[EncodedItem]) -> Result<Vec<f64>> {
        Ok(self.encode_traced(items)?.0)
    }

    fn backward(&self, trace: &HistoryTrace, dout: &[f64], grad: &mut HistoryEncoder) -> Result<()> {
        match (self, trace, grad) {
            (HistoryEncoder::Gru(cell), HistoryTrace::Gru(t), HistoryEncoder::Gru(g)) => {
                cell.backward(t, dout, g)?;
            }
            (
                HistoryEncoder::Fcn { first, second, .. },
                HistoryTrace::Fcn(c1, c2),
                HistoryEncoder::Fcn { first: g1, second: g2, .. },
            ) => {
                let da = second
                    .backward(c2, dout, g2, true)?
                    .expect("input gradient requested");
                first.backward(c1, &da, g1, false)?;
            }
            _ => return Err(Error::Consistency("history encoder kind mismatch".into())),
        }
        Ok(())
    }
}

impl Params for HistoryEncoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            HistoryEncoder::Gru(cell) => cell.collect(prefix, out),
            HistoryEncoder::Fcn { first, second, .. } => {
                first.collect(&crate::nn::params_join(prefix, "fc1"), out);
                second.collect(&crate::nn::params_join(prefix, "fc2"), out);
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match self {
            HistoryEncoder::Gru(cell) => cell.collect_mut(prefix, out),
            HistoryEncoder::Fcn { first, second, .. } => {
                first.collect_mut(&crate::nn::params_join(prefix, "fc1"), out);
                second.collect_mut(&crate::nn::params_join(prefix, "fc2"), out);
            }
        }
    }
}

/// The two history encoders and the rec-list projection `tanh(W_rec x + b_rec)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub rec: HistoryEncoder,
    pub ad: HistoryEncoder,
    pub rec_proj: Dense,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    rec: HistoryTrace,
    ad: HistoryTrace,
    proj: DenseCache,
}

/// Assembled state vector with its component widths.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    vector: Vec<f64>,
    widths: [usize; 4],
}

impl State {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.vector
    }

    pub fn width(&self) -> usize {
        self.vector.len()
    }

    fn part(&self, k: usize) -> &[f64] {
        let start: usize = self.widths[..k].iter().sum();
        &self.vector[start..start + self.widths[k]]
    }

    pub fn p_rec(&self) -> &[f64] {
        self.part(0)
    }

    pub fn p_ad(&self) -> &[f64] {
        self.part(1)
    }

    pub fn context(&self) -> &[f64] {
        self.part(2)
    }

    pub fn rec(&self) -> &[f64] {
        self.part(3)
    }
}

impl StateEncoder {
    pub fn gru<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        Self {
            rec: HistoryEncoder::gru(dims.history_hidden, rng),
            ad: HistoryEncoder::gru(dims.history_hidden, rng),
            rec_proj: Dense::random(dims.list_len * ITEM_DIM, dims.rec_width, Activation::Tanh, rng),
        }
    }

    pub fn fcn<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        Self {
            rec: HistoryEncoder::fcn(dims.window, dims.history_hidden, rng),
            ad: HistoryEncoder::fcn(dims.window, dims.history_hidden, rng),
            rec_proj: Dense::random(dims.list_len * ITEM_DIM, dims.rec_width, Activation::Tanh, rng),
        }
    }

    pub fn state_width(&self) -> usize {
        self.rec.output_dim() + self.ad.output_dim() + CONTEXT_DIM + self.rec_proj.output_dim()
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if obs.rec_history.iter().any(|i| i.kind != ItemKind::Normal) {
            return Err(Error::Schema("ad found in recommendation history".into()));
        }
        if obs.ad_history.iter().any(|i| i.kind != ItemKind::Ad) {
            return Err(Error::Schema("normal item found in ad history".into()));
        }
        let expected = self.rec_proj.input_dim() / ITEM_DIM;
        if obs.rec_list.len() != expected {
            return Err(Error::shape("rec-list length", expected, obs.rec_list.len()));
        }
        Ok(())
    }

    pub fn encode_traced(&self, obs: &Observation) -> Result<(State, EncoderTrace)> {
        self.check(obs)?;
        let (p_rec, rec) = self.rec.encode_traced(&obs.rec_history)?;
        let (p_ad, ad) = self.ad.encode_traced(&obs.ad_history)?;
        let (rec_t, proj) = self.rec_proj.forward_cached(&obs.rec_list.concat_vector())?;
        let widths = [p_rec.len(), p_ad.len(), CONTEXT_DIM, rec_t.len()];
        let mut vector = Vec::with_capacity(widths.iter().sum());
        vector.extend_from_slice(&p_rec);
        vector.extend_from_slice(&p_ad);
        vector.extend_from_slice(&obs.context.vector());
        vector.extend_from_slice(&rec_t);
        Ok((State { vector, widths }, EncoderTrace { rec, ad, proj }))
    }

    /// Backpropagates `d_state` (gradient w.r.t. the assembled vector).
    pub fn backward(&self, trace: &EncoderTrace, d_state: &[f64], grad: &mut StateEncoder) -> Result<()> {
        let width = self.state_width();
        if d_state.len() != width {
            return Err(Error::shape("state gradient", width, d_state.len()));
        }
        let h_rec = self.rec.output_dim();
        let h_ad = self.ad.output_dim();
        let (d_rec, rest) = d_state.split_at(h_rec);
        let (d_ad, rest) = rest.split_at(h_ad);
        let d_proj = &rest[CONTEXT_DIM..];
        self.rec.backward(&trace.rec, d_rec, &mut grad.rec)?;
        self.ad.backward(&trace.ad, d_ad, &mut grad.ad)?;
        self.rec_proj.backward(&trace.proj, d_proj, &mut grad.rec_proj, false)?;
        Ok(())
    }
}

/// Assembles `concat(p_rec, p_ad, context, rec)` for one observation.
pub fn build_state(obs: &Observation, encoder: &StateEncoder) -> Result<State> {
    Ok(encoder.encode_traced(obs)?.0)
}

impl Params for StateEncoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        use crate::nn::params_join as j;
        self.rec.collect(&j(prefix, "rec_history"), out);
        self.ad.collect(&j(prefix, "ad_history"), out);
        self.rec_proj.collect(&j(prefix, "rec_proj"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        use crate::nn::params_join as j;
        self.rec.collect_mut(&j(prefix, "rec_history"), out);
        self.ad.collect_mut(&j(prefix, "ad_history"), out);
        self.rec_proj.collect_mut(&j(prefix, "rec_proj"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw_normal(id: u64, v: f64) -> RawItem {
        RawItem::new(id, NORMAL_FIELDS.iter().map(|f| (f.to_string(), v)))
    }

    #[test]
    fn schemas_are_sixty_wide() {
        ItemSchema::normal().validate().unwrap();
        ItemSchema::ad().validate().unwrap();
        assert_eq!(ItemSchema::normal().width(), 60);
    }

    #[test]
    fn bucket_zero_everywhere() {
        let schema = ItemSchema::normal();
        // find an id hashing to bucket 0
        let id = (0..).find(|i| mix64(*i) % 20 == 0).unwrap();
        let item = schema.encode(&raw_normal(id, 0.0)).unwrap();
        assert_eq!(item.hot_indices(), &[0, 20, 28, 36, 44, 52]);
        let v = item.vector();
        assert_eq!(v.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn edge_goes_to_lower_bucket() {
        assert_eq!(bucket_index(0.25, 0.0, 1.0, 8), (1, false));
        assert_eq!(bucket_index(0.2500001, 0.0, 1.0, 8), (2, false));
        assert_eq!(bucket_index(1.0, 0.0, 1.0, 8), (7, false));
        assert_eq!(bucket_index(0.0, 0.0, 1.0, 8), (0, false));
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let schema = ItemSchema::normal();
        let mut raw = raw_normal(3, 0.5);
        raw.features.insert("like".into(), 1.7);
        raw.features.insert("finish".into(), -0.2);
        let mut stats = EncodeStats::default();
        let item = encode_item(&raw, &schema, &mut stats).unwrap();
        assert_eq!(stats.clamped, 2);
        assert_eq!(item.hot_indices()[1], 20 + 7);
        assert_eq!(item.hot_indices()[2], 28);
    }

    #[test]
    fn missing_field_is_a_schema_error() {
        let mut raw = raw_normal(3, 0.5);
        raw.features.remove("group");
        assert!(matches!(ItemSchema::normal().encode(&raw), Err(Error::Schema(_))));
    }

    #[test]
    fn context_is_thirteen_wide_one_hot_per_field() {
        let c = ContextFeatures::new(1, 4, 0).unwrap();
        let v = c.vector();
        assert_eq!(v.len(), 13);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2 + 4], 1.0);
        assert_eq!(v[11], 1.0);
        assert!(ContextFeatures::new(2, 0, 0).is_err());
    }

    fn sample_obs(rng: &mut ChaCha8Rng, rec_hist: usize, ad_hist: usize) -> Observation {
        let normal = ItemSchema::normal();
        let ad = ItemSchema::ad();
        let item = |schema: &ItemSchema, fields: &[&str], rng: &mut ChaCha8Rng| {
            let raw = RawItem::new(
                rng.random(),
                fields.iter().map(|f| (f.to_string(), rng.random::<f64>())),
            );
            schema.encode(&raw).unwrap()
        };
        let rec_history = (0..rec_hist).map(|_| item(&normal, &NORMAL_FIELDS, rng)).collect();
        let ad_history = (0..ad_hist).map(|_| item(&ad, &AD_FIELDS, rng)).collect();
        let list = (0..6).map(|_| item(&normal, &NORMAL_FIELDS, rng)).collect();
        Observation {
            rec_history,
            ad_history,
            context: ContextFeatures::new(0, 3, 1).unwrap(),
            rec_list: RecList::new(list, 6).unwrap(),
        }
    }

    #[test]
    fn full_state_is_501_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = StateEncoder::gru(&ModelDims::full(), &mut rng);
        for (r, a) in [(0, 0), (18, 0), (20, 7)] {
            let obs = sample_obs(&mut rng, r, a);
            let s = build_state(&obs, &enc).unwrap();
            assert_eq!(s.width(), 64 + 64 + 13 + 360);
            assert_eq!(s.width(), ModelDims::full().state_width());
        }
    }

    #[test]
    fn empty_histories_give_zero_preferences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = StateEncoder::gru(&ModelDims::eighth(), &mut rng);
        let obs = sample_obs(&mut rng, 0, 0);
        let s = build_state(&obs, &enc).unwrap();
        assert!(s.p_rec().iter().all(|v| *v == 0.0));
        assert!(s.p_ad().iter().all(|v| *v == 0.0));
        assert_eq!(s.context(), &obs.context.vector()[..]);
    }

    #[test]
    fn zero_projection_gives_zero_rec() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut enc = StateEncoder::gru(&ModelDims::full(), &mut rng);
        enc.rec_proj.zero_all();
        let obs = sample_obs(&mut rng, 5, 2);
        let s = build_state(&obs, &enc).unwrap();
        assert_eq!(s.rec().len(), 360);
        assert!(s.rec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kind_mismatch_in_history_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = StateEncoder::gru(&ModelDims::eighth(), &mut rng);
        let mut obs = sample_obs(&mut rng, 2, 2);
        let ad = obs.ad_history[0].clone();
        obs.rec_history.push(ad);
        assert!(matches!(build_state(&obs, &enc), Err(Error::Schema(_))));
    }

    #[test]
    fn histories_append_browsed_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let obs = sample_obs(&mut rng, 0, 1);
        let mut h = Histories::new(100);
        let first = h.observe(obs.context, obs.rec_list.clone());
        h.record(&obs.rec_list, Some(&obs.ad_history[0]));
        let second = h.observe(obs.context, obs.rec_list.clone());
        let mut expected = first.rec_history.clone();
        expected.extend(obs.rec_list.items().iter().cloned());
        assert_eq!(second.rec_history, expected);
        assert_eq!(second.ad_history, vec![obs.ad_history[0].clone()]);
    }

    #[test]
    fn window_keeps_most_recent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let obs = sample_obs(&mut rng, 0, 0);
        let mut h = Histories::new(8);
        h.record(&obs.rec_list, None);
        h.record(&obs.rec_list, None);
        let o = h.observe(obs.context, obs.rec_list.clone());
        assert_eq!(o.rec_history.len(), 8);
        assert_eq!(o.rec_history[..], [&obs.rec_list.items()[4..], obs.rec_list.items()].concat()[..]);
    }
}
