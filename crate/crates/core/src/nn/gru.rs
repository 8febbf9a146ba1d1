//! Gated recurrent unit with backpropagation through time.
//!
//! Per step, with input `x` and previous state `h`:
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)          update gate
//! r  = sigmoid(Wr x + Ur h + br)          reset gate
//! c  = tanh(Wc x + Uc (r * h) + bc)       candidate state
//! h' = (1 - z) * h + z * c
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid, sparse_support, Matrix};
use super::params::{join, ParamMut, ParamRef, Params};
use crate::error::{Error, Result};

/// Input matrix, recurrent matrix and bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateBlock {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl GateBlock {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input: Matrix::zeros(hidden, input_dim),
            recurrent: Matrix::zeros(hidden, hidden),
            bias: vec![0.0; hidden],
        }
    }

    fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        // fan-in of a gate pre-activation is input + hidden
        let bound = 1.0 / ((input_dim + hidden) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        Self {
            input: Matrix::from_vec(hidden, input_dim, draw(hidden * input_dim)),
            recurrent: Matrix::from_vec(hidden, hidden, draw(hidden * hidden)),
            bias: draw(hidden),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "input"),
            shape: (self.input.rows(), self.input.cols()),
            data: self.input.data(),
        });
        out.push(ParamRef {
            name: join(prefix, "recurrent"),
            shape: (self.recurrent.rows(), self.recurrent.cols()),
            data: self.recurrent.data(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: (self.bias.len(), 1),
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let in_shape = (self.input.rows(), self.input.cols());
        let rec_shape = (self.recurrent.rows(), self.recurrent.cols());
        out.push(ParamMut {
            name: join(prefix, "input"),
            shape: in_shape,
            data: self.input.data_mut(),
        });
        out.push(ParamMut {
            name: join(prefix, "recurrent"),
            shape: rec_shape,
            data: self.recurrent.data_mut(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: (self.bias.len(), 1),
            data: &mut self.bias,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    input_dim: usize,
    hidden: usize,
    pub update: GateBlock,
    pub reset: GateBlock,
    pub candidate: GateBlock,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    support: Option<Vec<usize>>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

/// Per-step values saved by [`GruCell::encode_cached`].
#[derive(Debug, Clone, Default)]
pub struct GruTrace {
    steps: Vec<StepCache>,
}

impl GruTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl GruCell {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            update: GateBlock::zeros(input_dim, hidden),
            reset: GateBlock::zeros(input_dim, hidden),
            candidate: GateBlock::zeros(input_dim, hidden),
        }
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input_dim,
            hidden,
            update: GateBlock::random(input_dim, hidden, rng),
            reset: GateBlock::random(input_dim, hidden, rng),
            candidate: GateBlock::random(input_dim, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("gru input", self.input_dim, x.len()));
        }
        Ok(())
    }

    fn step(&self, x: &[f64], support: Option<&[usize]>, h: &[f64]) -> StepCache {
        let n = self.hidden;
        let mut z = self.update.bias.clone();
        matvec_add(&self.update.input, x, support, &mut z);
        matvec_add(&self.update.recurrent, h, None, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.reset.bias.clone();
        matvec_add(&self.reset.input, x, support, &mut r);
        matvec_add(&self.reset.recurrent, h, None, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
        let mut c = self.candidate.bias.clone();
        matvec_add(&self.candidate.input, x, support, &mut c);
        matvec_add(&self.candidate.recurrent, &rh, None, &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());

        StepCache {
            x: x.to_vec(),
            support: support.map(|s| s.to_vec()),
            h_prev: h.to_vec(),
            z,
            r,
            c,
            rh,
        }
    }

    fn next_hidden(s: &StepCache) -> Vec<f64> {
        s.h_prev
            .iter()
            .zip(s.z.iter().zip(&s.c))
            .map(|(h, (z, c))| (1.0 - z) * h + z * c)
            .collect()
    }

    /// Folds the recurrence over `sequence`; an empty sequence returns `h0`.
    pub fn encode<S: AsRef<[f64]>>(&self, sequence: &[S], h0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_cached(sequence, h0)?.0)
    }

    pub fn encode_cached<S: AsRef<[f64]>>(
        &self,
        sequence: &[S],
        h0: &[f64],
    ) -> Result<(Vec<f64>, GruTrace)> {
        if h0.len() != self.hidden {
            return Err(Error::shape("gru initial state", self.hidden, h0.len()));
        }
        let mut h = h0.to_vec();
        let mut trace = GruTrace {
            steps: Vec::with_capacity(sequence.len()),
        };
        for x in sequence {
            let x = x.as_ref();
            self.check(x)?;
            let support = sparse_support(x);
            let cache = self.step(x, support.as_deref(), &h);
            h = Self::next_hidden(&cache);
            trace.steps.push(cache);
        }
        Ok((h, trace))
    }

    /// Backpropagation through time. Accumulates into `grad`, returns `dL/dh0`.
    pub fn backward(&self, trace: &GruTrace, dh_final: &[f64], grad: &mut GruCell) -> Result<Vec<f64>> {
        if dh_final.len() != self.hidden {
            return Err(Error::shape("gru upstream", self.hidden, dh_final.len()));
        }
        let n = self.hidden;
        let mut dh = dh_final.to_vec();
        for s in trace.steps.iter().rev() {
            let support = s.support.as_deref();
            let mut dh_prev: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - s.z[i])).collect();

            // candidate
            let dc_pre: Vec<f64> = (0..n)
                .map(|i| dh[i] * s.z[i] * (1.0 - s.c[i] * s.c[i]))
                .collect();
            outer_add(&mut grad.candidate.input, &dc_pre, &s.x, support);
            outer_add(&mut grad.candidate.recurrent, &dc_pre, &s.rh, None);
            add_into(&mut grad.candidate.bias, &dc_pre);
            let mut drh = vec![0.0; n];
            matvec_t_add(&self.candidate.recurrent, &dc_pre, &mut drh);

            // reset gate
            let dr_pre: Vec<f64> = (0..n)
                .map(|i| drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
                .collect();
            for i in 0..n {
                dh_prev[i] += drh[i] * s.r[i];
            }
            outer_add(&mut grad.reset.input, &dr_pre, &s.x, support);
            outer_add(&mut grad.reset.recurrent, &dr_pre, &s.h_prev, None);
            add_into(&mut grad.reset.bias, &dr_pre);
            matvec_t_add(&self.reset.recurrent, &dr_pre, &mut dh_prev);

            // update gate
            let dz_pre: Vec<f64> = (0..n)
                .map(|i| dh[i] * (s.c[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]))
                .collect();
            outer_add(&mut grad.update.input, &dz_pre, &s.x, support);
            outer_add(&mut grad.update.recurrent, &dz_pre, &s.h_prev, None);
            add_into(&mut grad.update.bias, &dz_pre);
            matvec_t_add(&self.update.recurrent, &dz_pre, &mut dh_prev);

            dh = dh_prev;
        }
        Ok(dh)
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl Params for GruCell {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.update.collect(&join(prefix, "update"), out);
        self.reset.collect(&join(prefix, "reset"), out);
        self.candidate.collect(&join(prefix, "candidate"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.update.collect_mut(&join(prefix, "update"), out);
        self.reset.collect_mut(&join(prefix, "reset"), out);
        self.candidate.collect_mut(&join(prefix, "candidate"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_sequence_returns_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = GruCell::random(4, 3, &mut rng);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(cell.encode(&empty, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let h0 = [0.25, -0.5, 0.125];
        assert_eq!(cell.encode(&empty, &h0).unwrap(), h0.to_vec());
    }

    #[test]
    fn zero_cell_halves_the_state() {
        let cell = GruCell::zeros(2, 2);
        let seq = vec![vec![1.0, -3.0], vec![0.5, 0.5]];
        assert_eq!(cell.encode(&seq, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // z = 0.5, candidate = 0, so h' = 0.5 h
        let one = cell.encode(&seq[..1], &[0.8, -0.4]).unwrap();
        assert_eq!(one, vec![0.4, -0.2]);
    }

    #[test]
    fn matches_unrolled_gate_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, n) = (3, 2);
        let cell = GruCell::random(d, n, &mut rng);
        let seq: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        let lin = |m: &Matrix, v: &[f64], i: usize| -> f64 {
            (0..m.cols()).map(|j| m.get(i, j) * v[j]).sum::<f64>()
        };
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = vec![0.0; n];
        for x in &seq {
            let z: Vec<f64> = (0..n)
                .map(|i| sig(lin(&cell.update.input, x, i) + lin(&cell.update.recurrent, &h, i) + cell.update.bias[i]))
                .collect();
            let r: Vec<f64> = (0..n)
                .map(|i| sig(lin(&cell.reset.input, x, i) + lin(&cell.reset.recurrent, &h, i) + cell.reset.bias[i]))
                .collect();
            let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
            let c: Vec<f64> = (0..n)
                .map(|i| (lin(&cell.candidate.input, x, i) + lin(&cell.candidate.recurrent, &rh, i) + cell.candidate.bias[i]).tanh())
                .collect();
            h = (0..n).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect();
        }
        let got = cell.encode(&seq, &[0.0; 2]).unwrap();
        for i in 0..n {
            assert!((got[i] - h[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_errors() {
        let cell = GruCell::zeros(3, 2);
        assert!(cell.encode(&[vec![1.0; 2]], &[0.0; 2]).is_err());
        assert!(cell.encode(&[vec![1.0; 3]], &[0.0; 3]).is_err());
    }
}
