//! Fully connected layer `y = activation(W x + b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec_add, matvec_t_add, outer_add, sparse_support, Matrix};
use super::params::{join, ParamMut, ParamRef, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
    support: Option<Vec<usize>>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("dense bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weights = Matrix::uniform_fan_in(output, input, rng);
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let bias = (0..output).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("dense input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &[f64], support: Option<&[usize]>) -> Vec<f64> {
        let mut pre = self.bias.clone();
        matvec_add(&self.weights, x, support, &mut pre);
        pre
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let support = sparse_support(x);
        let mut y = self.pre_activation(x, support.as_deref());
        for v in &mut y {
            *v = self.activation.apply(*v);
        }
        Ok(y)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        self.check_input(x)?;
        let support = sparse_support(x);
        let pre = self.pre_activation(x, support.as_deref());
        let output: Vec<f64> = pre.iter().map(|v| self.activation.apply(*v)).collect();
        let cache = DenseCache {
            input: x.to_vec(),
            pre,
            output: output.clone(),
            support,
        };
        Ok((output, cache))
    }

    /// Accumulates parameter gradients into `grad` and optionally returns `dL/dx`.
    pub fn backward(
        &self,
        cache: &DenseCache,
        dy: &[f64],
        grad: &mut Dense,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if dy.len() != self.output_dim() {
            return Err(Error::shape("dense upstream", self.output_dim(), dy.len()));
        }
        let da: Vec<f64> = dy
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(g, (p, o))| g * self.activation.derivative(*p, *o))
            .collect();
        outer_add(&mut grad.weights, &da, &cache.input, cache.support.as_deref());
        for (b, d) in grad.bias.iter_mut().zip(&da) {
            *b += d;
        }
        if want_input_grad {
            let mut dx = vec![0.0; self.input_dim()];
            matvec_t_add(&self.weights, &da, &mut dx);
            Ok(Some(dx))
        } else {
            Ok(None)
        }
    }

    /// True if the relu pre-activations of `a` and `b` differ in sign pattern.
    #[allow(dead_code)]
    pub(crate) fn kink_between(&self, a: &DenseCache, b: &DenseCache) -> bool {
        self.activation == Activation::Relu
            && a.pre.iter().zip(&b.pre).any(|(x, y)| (*x > 0.0) != (*y > 0.0))
    }
}

impl Params for Dense {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: (self.weights.rows(), self.weights.cols()),
            data: self.weights.data(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: (self.bias.len(), 1),
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let shape = (self.weights.rows(), self.weights.cols());
        out.push(ParamMut {
            name: join(prefix, "weight"),
            shape,
            data: self.weights.data_mut(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: (self.bias.len(), 1),
            data: &mut self.bias,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_leave_only_bias() {
        let layer = Dense::new(Matrix::zeros(1, 3), vec![0.5], Activation::Tanh).unwrap();
        let y = layer.forward(&[3.0, -1.0, 7.0]).unwrap();
        assert!((y[0] - 0.46212).abs() < 1e-5);
        assert_eq!(y[0], 0.5f64.tanh());
    }

    #[test]
    fn matches_straight_line_matmul() {
        // Oracle: explicit triple loop written without the layer kernels.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = Dense::random(4, 3, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = layer.weights().data();
        let mut expected = [0.0; 3];
        for i in 0..3 {
            let mut s = layer.bias()[i];
            for j in 0..4 {
                s += w[i * 4 + j] * x[j];
            }
            expected[i] = s.tanh();
        }
        let y = layer.forward(&x).unwrap();
        for i in 0..3 {
            assert!((y[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let layer = Dense::zeros(3, 2, Activation::Relu);
        assert!(matches!(
            layer.forward(&[1.0]),
            Err(Error::Shape { expected: 3, actual: 1, .. })
        ));
    }

    #[test]
    fn bias_gradient_of_linear_chain_is_one() {
        let layer = Dense::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let (_, cache) = layer.forward_cached(&[0.3, -0.2]).unwrap();
        let mut grad = Dense::zeros(2, 2, Activation::Identity);
        layer.backward(&cache, &[1.0, 0.0], &mut grad, false).unwrap();
        assert_eq!(grad.bias(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::random(5, 4, Activation::Relu, &mut rng);
        let (_, cache) = layer.forward_cached(&[1.0, 0.0, 0.5, -0.5, 2.0]).unwrap();
        let mut grad = Dense::zeros(5, 4, Activation::Relu);
        let dx = layer.backward(&cache, &[0.0; 4], &mut grad, true).unwrap().unwrap();
        assert!(grad.params().iter().all(|p| p.data.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().all(|v| *v == 0.0));
    }
}
