//! ReLU multi-layer perceptron over a flat parameter buffer.
//!
//! Weights of each layer are stored row-major as `out × in`, followed by the
//! `out` biases. Read as a column-major `in × out` matrix the weight block is
//! `Wᵀ`, so a batch `H` (rows = points) maps to `H·Wᵀ + b` without copies.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Input width, hidden widths and output width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one hidden layer".into()));
        }
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    input: usize,
    output: usize,
    offset: usize,
}

impl Layer {
    fn weight_len(&self) -> usize {
        self.input * self.output
    }

    fn len(&self) -> usize {
        self.weight_len() + self.output
    }

    fn weights_t<'a>(&self, params: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&params[self.offset..self.offset + self.weight_len()], self.input, self.output)
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.weight_len()..self.offset + self.len()]
    }
}

/// Layout of an MLP inside a larger parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    offset: usize,
    len: usize,
}

impl Mlp {
    pub fn new(config: &MlpConfig, offset: usize) -> Self {
        let widths = config.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut at = offset;
        for w in widths.windows(2) {
            let layer = Layer {
                input: w[0],
                output: w[1],
                offset: at,
            };
            at += layer.len();
            layers.push(layer);
        }
        Self {
            layers,
            offset,
            len: at - offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(name suffix, rows, cols, offset)` per tensor, weights then biases.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), vec![l.output, l.input], l.offset));
            out.push((format!("layer{i}.bias"), vec![l.output], l.offset + l.weight_len()));
        }
        out
    }

    /// Uniform `±1/√fan_in` initialization of weights and biases.
    pub fn init(&self, params: &mut [f64], mut uniform: impl FnMut() -> f64) {
        for l in &self.layers {
            let bound = (1.0 / l.input as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.len()] {
                *p = bound * (2.0 * uniform() - 1.0);
            }
        }
    }

    /// Returns all activations: the input, each post-ReLU hidden layer, and the
    /// final linear output.
    pub fn forward(&self, params: &[f64], input: DMatrix<f64>, layer_base: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, l) in self.layers.iter().enumerate() {
            let h = acts.last().unwrap();
            let mut z = h * l.weights_t(params);
            for (j, b) in l.bias(params).iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*b);
            }
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: layer_base + i });
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Backpropagate `d_out` (gradient w.r.t. the final output) through the
    /// stored activations, accumulating parameter gradients into `grad`.
    /// Returns the gradient with respect to the input.
    pub fn backward(&self, params: &[f64], acts: &[DMatrix<f64>], d_out: DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let mut delta = d_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let h = &acts[i];
            {
                let mut gw = DMatrixViewMut::from_slice(
                    &mut grad[l.offset..l.offset + l.weight_len()],
                    l.input,
                    l.output,
                );
                gw.gemm_tr(1.0, h, &delta, 1.0);
            }
            let gb = &mut grad[l.offset + l.weight_len()..l.offset + l.len()];
            for (j, g) in gb.iter_mut().enumerate() {
                *g += delta.column(j).sum();
            }
            let mut d_in = &delta * l.weights_t(params).transpose();
            if i > 0 {
                // acts[i] is a ReLU output
                d_in.zip_apply(h, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = d_in;
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn setup() -> (Mlp, Vec<f64>) {
        let cfg = MlpConfig {
            input: 3,
            hidden: vec![5, 4],
            output: 2,
            activation: Activation::Relu,
        };
        let mlp = Mlp::new(&cfg, 7);
        let mut params = vec![0.0; 7 + mlp.num_params()];
        let mut rng = RngStream::new(1);
        mlp.init(&mut params, || rng.uniform());
        (mlp, params)
    }

    #[test]
    fn parameter_count() {
        let (mlp, _) = setup();
        assert_eq!(mlp.num_params(), (3 * 5 + 5) + (5 * 4 + 4) + (4 * 2 + 2));
    }

    #[test]
    fn matches_row_major_reference() {
        let (mlp, params) = setup();
        let x = DMatrix::from_row_slice(1, 3, &[0.3, -0.7, 1.1]);
        let out = mlp.forward(&params, x.clone(), 0).unwrap().pop().unwrap();
        // reference: explicit loops over the row-major `out × in` layout
        let mut h: Vec<f64> = x.iter().copied().collect();
        for (i, l) in mlp.layers.iter().enumerate() {
            let mut z = vec![0.0; l.output];
            for o in 0..l.output {
                z[o] = params[l.offset + l.weight_len() + o];
                for k in 0..l.input {
                    z[o] += params[l.offset + o * l.input + k] * h[k];
                }
                if i + 1 < mlp.layers.len() {
                    z[o] = z[o].max(0.0);
                }
            }
            h = z;
        }
        for j in 0..2 {
            assert!((out[(0, j)] - h[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mlp, mut params) = setup();
        let x = DMatrix::from_row_slice(4, 3, &[0.1, 0.2, 0.3, -1.0, 0.5, 0.9, 0.4, -0.3, 0.2, 1.5, 1.0, -0.5]);
        // objective: sum of output² / 2 ⇒ d_out = output
        let f = |p: &[f64]| -> f64 {
            let out = mlp.forward(p, x.clone(), 0).unwrap().pop().unwrap();
            0.5 * out.norm_squared()
        };
        let acts = mlp.forward(&params, x.clone(), 0).unwrap();
        let mut grad = vec![0.0; params.len()];
        mlp.backward(&params, &acts, acts.last().unwrap().clone(), &mut grad);
        for i in mlp.offset()..params.len() {
            let orig = params[i];
            params[i] = orig + 1e-6;
            let up = f(&params);
            params[i] = orig - 1e-6;
            let down = f(&params);
            params[i] = orig;
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn rejects_no_hidden_layers() {
        let cfg = MlpConfig {
            input: 2,
            hidden: vec![],
            output: 1,
            activation: Activation::Relu,
        };
        assert!(cfg.validate().is_err());
    }
}
