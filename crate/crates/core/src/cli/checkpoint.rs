//! Binary checkpoint: evaluation and target networks, Adam state, step.
//!
//! Layout: the magic `DEARCKPT`, a u32 format version, then sections of
//! `tag[4] | u64 byte length | payload`. Integers and floats are little-endian;
//! strings are a u64 length followed by UTF-8 bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::ModelDims;
use crate::nn::{AdamConfig, MomentBlock, OptimizerState, Params};
use crate::qnet::{QNetwork, Variant};
use crate::trainer::Trainer;

pub const MAGIC: &[u8; 8] = b"DEARCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub dims: ModelDims,
    pub mean_centered: bool,
    pub step: u64,
    pub config_digest: String,
    pub net: QNetwork,
    pub target: QNetwork,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, config_digest: &str) -> Self {
        let net = trainer.network().clone();
        Self {
            variant: net.variant(),
            dims: *net.dims(),
            mean_centered: net.mean_centered(),
            step: trainer.step(),
            config_digest: config_digest.to_string(),
            target: trainer.target().clone(),
            optimizer: trainer.optimizer().clone(),
            net,
        }
    }

    /// Errors unless the checkpoint holds the expected architecture.
    pub fn expect_variant(&self, variant: Variant, dims: &ModelDims) -> Result<()> {
        if self.variant != variant {
            return Err(Error::Checkpoint(format!(
                "variant mismatch: checkpoint holds {}, run expects {}",
                self.variant, variant
            )));
        }
        if &self.dims != dims {
            return Err(Error::Checkpoint("layer widths differ from the configured model".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let mut meta = Writer::default();
        meta.str(self.variant.name());
        let d = &self.dims;
        for v in [d.list_len, d.history_hidden, d.rec_width, d.head_hidden, d.window] {
            meta.u64(v as u64);
        }
        meta.u64(self.mean_centered as u64);
        meta.u64(self.step);
        meta.str(&self.config_digest);
        section(&mut out, b"META", meta.0);
        section(&mut out, b"QNET", write_params(&self.net));
        section(&mut out, b"TRGT", write_params(&self.target));

        let mut opt = Writer::default();
        let c = &self.optimizer.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            opt.f64(v);
        }
        opt.u64(self.optimizer.step);
        opt.u64(self.optimizer.blocks.len() as u64);
        for b in &self.optimizer.blocks {
            opt.str(&b.name);
            opt.floats(&b.first);
            opt.floats(&b.second);
        }
        section(&mut out, b"ADAM", opt.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, what: "header" };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "incompatible checkpoint version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let mut meta = r.section(b"META")?;
        let name = meta.str()?;
        let variant: Variant = name
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown variant `{name}`")))?;
        let mut d = [0usize; 5];
        for v in &mut d {
            *v = meta.u64()? as usize;
        }
        let dims = ModelDims {
            list_len: d[0],
            history_hidden: d[1],
            rec_width: d[2],
            head_hidden: d[3],
            window: d[4],
        };
        dims.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mean_centered = meta.u64()? != 0;
        let step = meta.u64()?;
        let config_digest = meta.str()?;
        meta.finish()?;

        let skeleton = QNetwork::new(variant, dims, mean_centered, &mut ChaCha8Rng::seed_from_u64(0));
        let net = read_params(r.section(b"QNET")?, skeleton.clone())?;
        let target = read_params(r.section(b"TRGT")?, skeleton)?;

        let mut opt = r.section(b"ADAM")?;
        let config = AdamConfig {
            learning_rate: opt.f64()?,
            beta1: opt.f64()?,
            beta2: opt.f64()?,
            epsilon: opt.f64()?,
        };
        let opt_step = opt.u64()?;
        let n = opt.u64()? as usize;
        let layout = net.params();
        if n != layout.len() {
            return Err(Error::Checkpoint(format!("optimizer holds {n} blocks, network {}", layout.len())));
        }
        let mut blocks = Vec::with_capacity(n);
        for p in &layout {
            let name = opt.str()?;
            let first = opt.floats()?;
            let second = opt.floats()?;
            if name != p.name || first.len() != p.data.len() || second.len() != p.data.len() {
                return Err(Error::Checkpoint(format!("optimizer block `{name}` does not match `{}`", p.name)));
            }
            blocks.push(MomentBlock { name, first, second });
        }
        opt.finish()?;
        if !r.buf.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self {
            variant,
            dims,
            mean_centered,
            step,
            config_digest,
            net,
            target,
            optimizer: OptimizerState {
                config,
                step: opt_step,
                blocks,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

fn write_params(net: &QNetwork) -> Vec<u8> {
    let mut w = Writer::default();
    let params = net.params();
    w.u64(params.len() as u64);
    for p in params {
        w.str(&p.name);
        w.u64(p.shape.0 as u64);
        w.u64(p.shape.1 as u64);
        w.floats(p.data);
    }
    w.0
}

fn read_params(mut r: Reader<'_>, mut net: QNetwork) -> Result<QNetwork> {
    let n = r.u64()? as usize;
    let mut blocks = net.params_mut();
    if n != blocks.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {n} parameter blocks, architecture has {}",
            r.what,
            blocks.len()
        )));
    }
    for b in blocks.iter_mut() {
        let name = r.str()?;
        let shape = (r.u64()? as usize, r.u64()? as usize);
        let data = r.floats()?;
        if name != b.name || shape != b.shape || data.len() != b.data.len() {
            return Err(Error::Checkpoint(format!(
                "{}: block `{name}` {shape:?} does not match `{}` {:?}",
                r.what, b.name, b.shape
            )));
        }
        b.data.copy_from_slice(&data);
    }
    drop(blocks);
    r.finish()?;
    Ok(net)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint(format!(
                "truncated {}: needed {n} bytes, {} left",
                self.what,
                self.buf.len()
            )));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(unit as u64) > self.buf.len() as u64 {
            return Err(Error::Checkpoint(format!("truncated {}: length {n} exceeds remaining data", self.what)));
        }
        Ok(n as usize)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{}: invalid UTF-8", self.what)))
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn section(&mut self, tag: &'static [u8; 4]) -> Result<Reader<'a>> {
        let what = std::str::from_utf8(tag).expect("ascii tag");
        self.what = what;
        let got = self.take(4)?;
        if got != tag {
            return Err(Error::Checkpoint(format!(
                "expected section {what}, found {:?}",
                String::from_utf8_lossy(got)
            )));
        }
        let n = self.len(1)?;
        Ok(Reader {
            buf: self.take(n)?,
            what,
        })
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("{}: {} unread bytes", self.what, self.buf.len())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::random_observation;
    use crate::trainer::TrainConfig;

    fn checkpoint(variant: Variant) -> Checkpoint {
        let cfg = TrainConfig {
            variant,
            ..TrainConfig::default()
        };
        let mut ck = Checkpoint::from_trainer(&Trainer::new(cfg).unwrap(), "abc");
        ck.step = 42;
        ck.optimizer.step = 42;
        for b in &mut ck.optimizer.blocks {
            b.first.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        }
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        for variant in Variant::ALL {
            let ck = checkpoint(variant);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn restored_network_reproduces_q_values() {
        let ck = checkpoint(Variant::Dear);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let obs = random_observation(&mut rng, 6, 4, 2);
            let ad = crate::features::random_item(crate::features::ItemKind::Ad, &mut rng).vector();
            let a = ck.net.greedy_action(&obs, &[ad.clone()]).unwrap();
            let b = back.net.greedy_action(&obs, &[ad]).unwrap();
            assert_eq!(a.q.to_bits(), b.q.to_bits());
        }
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = checkpoint(Variant::NoDueling).to_bytes();
        for cut in [0, 7, 12, 30, bytes.len() / 2, bytes.len() - 1] {
            let e = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, Error::Checkpoint(_)), "{cut}: {e}");
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = checkpoint(Variant::Dear).to_bytes();
        bytes[8] = 9;
        let e = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(e.contains("incompatible checkpoint version 9"), "{e}");
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let ck = checkpoint(Variant::ArchA);
        let e = ck.expect_variant(Variant::Dear, &ck.dims).unwrap_err().to_string();
        assert!(e.contains("variant mismatch"), "{e}");
        ck.expect_variant(Variant::ArchA, &ck.dims).unwrap();
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ck = checkpoint(Variant::FcnEncoder);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
