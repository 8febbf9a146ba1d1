//! Named views over trainable parameters and the gradient bundle built from them.

use crate::error::{Error, Result};

/// Borrowed view of one parameter block.
#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

/// Mutable view of one parameter block.
#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

/// Anything that owns trainable parameters.
///
/// Block order is fixed per type, so two values of the same architecture
/// always visit their blocks in the same sequence.
pub trait Params {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Sets every parameter to zero (used to build gradient accumulators).
    fn zero_all(&mut self) {
        for p in self.params_mut() {
            p.data.fill(0.0);
        }
    }

    /// Copies all parameter values from `other`, which must share the layout.
    fn copy_from(&mut self, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let src = other.params();
        let dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::Consistency(format!(
                "block count {} vs {}",
                src.len(),
                dst.len()
            )));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.name != s.name || d.data.len() != s.data.len() {
                return Err(Error::Consistency(format!(
                    "block {} does not match {}",
                    d.name, s.name
                )));
            }
            d.data.copy_from_slice(s.data);
        }
        Ok(())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// One gradient tensor per trainable parameter, keyed by block name.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    entries: Vec<GradEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub shape: (usize, usize),
    pub values: Vec<f64>,
}

impl GradientBundle {
    /// Snapshot of a parameter-shaped accumulator.
    pub fn from_params<P: Params + ?Sized>(acc: &P) -> Self {
        let entries = acc
            .params()
            .into_iter()
            .map(|p| GradEntry {
                name: p.name,
                shape: p.shape,
                values: p.data.to_vec(),
            })
            .collect();
        Self { entries }
    }

    pub fn from_entries(entries: Vec<GradEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[GradEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [GradEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.values.iter().all(|v| *v == 0.0))
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            for v in &mut e.values {
                *v *= factor;
            }
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Checks that this bundle covers exactly the blocks of `params`.
    pub fn check_covers<P: Params + ?Sized>(&self, params: &P) -> Result<()> {
        let blocks = params.params();
        if blocks.len() != self.entries.len() {
            return Err(Error::Consistency(format!(
                "gradient has {} blocks, network has {}",
                self.entries.len(),
                blocks.len()
            )));
        }
        for (p, g) in blocks.iter().zip(&self.entries) {
            if p.name != g.name || p.data.len() != g.values.len() {
                return Err(Error::Consistency(format!(
                    "gradient block {} does not match parameter {}",
                    g.name, p.name
                )));
            }
        }
        Ok(())
    }
}
