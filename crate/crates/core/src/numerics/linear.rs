use super::{RngStream, Tensor};
use crate::error::{invalid, Result};

/// Affine map `y = W x + b` with `W` stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return invalid(format!(
                "bias shape {:?} does not match {out} outputs",
                bias.shape()
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Weights and biases uniform in `±1/√inputs`.
    pub fn random(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n).map(|_| rng.uniform_f32(-bound, bound)).collect()
        };
        let weight = draw(inputs * outputs);
        let bias = draw(outputs);
        Self {
            weight: Tensor::matrix(outputs, inputs, weight).expect("sized"),
            bias: Tensor::vector(bias),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Bias first, then products added in input order.
    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let n_in = self.inputs();
        debug_assert_eq!(x.len(), n_in);
        let w = self.weight.data();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = b;
                for (wv, xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                acc
            })
            .collect()
    }

    pub fn checked_forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.inputs() {
            return invalid(format!(
                "linear layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            ));
        }
        Ok(self.forward(x))
    }
}
