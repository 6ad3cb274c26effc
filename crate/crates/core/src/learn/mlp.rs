//! Dense tanh networks with a hand-written backward pass.
//!
//! Batches are stored column-wise: an input batch is a `dim x batch` matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Multilayer perceptron, tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`
    /// (after tanh for hidden layers).
    acts: Vec<DMatrix<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("tape holds at least the input")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// Gaussian init with variance `1/fan_in`, output layer scaled by
    /// `output_gain`, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let gain = if l == last { output_gain } else { 1.0 };
            let std = gain / (layer.input_dim() as f64).sqrt();
            for w in layer.weight.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * std;
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut x = DVector::from_column_slice(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &x + &layer.bias;
            if l != last {
                z.apply(|v| *v = v.tanh());
            }
            x = z;
        }
        Ok(x)
    }

    /// Batched forward pass; keeps activations for [`Mlp::backward`].
    pub fn forward_batch(&self, input: DMatrix<f64>) -> Result<MlpTape> {
        if input.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.nrows()
            )));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let mut z = &layer.weight * x;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if l != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Ok(MlpTape { acts })
    }

    /// Accumulate parameter gradients into `grad` given `d loss / d output`
    /// for the batch recorded in `tape`. Returns `d loss / d input`.
    pub fn backward(&self, tape: &MlpTape, d_output: DMatrix<f64>, grad: &mut Mlp) -> DMatrix<f64> {
        let mut delta = d_output;
        for l in (0..self.layers.len()).rev() {
            let input = &tape.acts[l];
            let g = &mut grad.layers[l];
            g.weight.gemm(1.0, &delta, &input.transpose(), 1.0);
            for col in delta.column_iter() {
                g.bias += col;
            }
            let mut d_input = self.layers[l].weight.transpose() * &delta;
            if l > 0 {
                // input to this layer is tanh of the previous pre-activation
                d_input.zip_apply(input, |d, a| *d *= 1.0 - a * a);
            }
            delta = d_input;
        }
        delta
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line scalar forward pass, independent of the matrix code.
    fn scalar_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.output_dim()];
            for (o, n) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (i, xi) in cur.iter().enumerate() {
                    acc += layer.weight[(o, i)] * xi;
                }
                *n = if l + 1 < net.layers.len() { acc.tanh() } else { acc };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[13, 64, 64, 2]);
        let out = net.forward(&[0.3; 13]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[3, 2]);
        net.layers[0].weight[(0, 0)] = 1.0;
        net.layers[0].weight[(1, 1)] = 1.0;
        let out = net.forward(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn forward_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::init(&[13, 64, 64, 2], 1.0, &mut rng);
        for l in &mut net.layers {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        for _ in 0..10 {
            let x: Vec<f64> = (0..13).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = scalar_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
            let batch = net.forward_batch(DMatrix::from_column_slice(13, 1, &x)).unwrap();
            for (u, v) in batch.output().iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::zeros(&[4, 3, 1]);
        assert!(matches!(net.forward(&[1.0; 3]), Err(Error::Shape(_))));
        assert!(net.forward_batch(DMatrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::init(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let target = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp| {
            let y = n.forward_batch(x.clone()).unwrap();
            0.5 * (y.output() - &target).norm_squared()
        };
        let tape = net.forward_batch(x.clone()).unwrap();
        let mut grad = net.zeros_like();
        net.backward(&tape, tape.output() - &target, &mut grad);

        let h = 1e-6;
        let mut probe = net.clone();
        let analytic: Vec<f64> = grad.tensors().concat();
        let mut idx = 0;
        for t in 0..probe.tensors().len() {
            for i in 0..probe.tensors()[t].len() {
                let orig = probe.tensors()[t][i];
                probe.tensors_mut()[t][i] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut()[t][i] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut()[t][i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - analytic[idx]).abs() < 1e-7, "param {idx}: {fd} vs {}", analytic[idx]);
                idx += 1;
            }
        }
    }
}
