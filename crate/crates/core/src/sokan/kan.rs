use super::spline::{SplineGrid, MAX_ORDER};
use crate::error::{invalid, Result};
use crate::numerics::{Linear, Tensor};

/// KAN layer with a frozen affine base and a trainable residual B-spline on
/// every edge.
///
/// Edge `(j, p)` carries `a_jp(x) = base_weight[j,p]·x + Σ_i coeffs[j,p,i]·B_i(x)`
/// and output `j` is `base_bias[j] + Σ_p a_jp(x_p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KanLayer {
    base: Linear,
    grid: SplineGrid,
    coeffs: Tensor,
}

/// Per-forward record: inputs, their sparse basis values and every edge
/// activation `a_jp` (`[m × h]`).
#[derive(Clone, Debug)]
pub struct KanCache {
    pub input: Vec<f32>,
    basis_start: Vec<usize>,
    basis: Vec<f32>,
    pub activations: Tensor,
}

impl KanLayer {
    /// Residual splines start at zero, so the layer reproduces `base` exactly.
    pub fn from_base(base: Linear, grid: SplineGrid) -> Self {
        let coeffs = Tensor::zeros(&[base.outputs(), base.inputs(), grid.num_basis()]);
        Self { base, grid, coeffs }
    }

    pub fn from_parts(base: Linear, grid: SplineGrid, coeffs: Tensor) -> Result<Self> {
        let want = [base.outputs(), base.inputs(), grid.num_basis()];
        if coeffs.shape() != want {
            return invalid(format!(
                "coefficient shape {:?}, expected {want:?}",
                coeffs.shape()
            ));
        }
        Ok(Self { base, grid, coeffs })
    }

    pub fn base(&self) -> &Linear {
        &self.base
    }

    pub(crate) fn base_mut(&mut self) -> &mut Linear {
        &mut self.base
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Tensor {
        &mut self.coeffs
    }

    pub fn inputs(&self) -> usize {
        self.base.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.base.outputs()
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.inputs() {
            return invalid(format!(
                "KAN layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            ));
        }
        Ok(())
    }

    fn basis_table(&self, x: &[f32]) -> (Vec<usize>, Vec<f32>) {
        let width = self.grid.order + 1;
        let mut starts = Vec::with_capacity(x.len());
        let mut vals = vec![0.0f32; x.len() * width];
        let mut scratch = [0.0f32; MAX_ORDER + 1];
        for (p, &xp) in x.iter().enumerate() {
            starts.push(self.grid.nonzero_basis(xp, &mut scratch));
            vals[p * width..(p + 1) * width].copy_from_slice(&scratch[..width]);
        }
        (starts, vals)
    }

    /// Shared kernel; `edges`, when given, receives every `a_jp`.
    fn evaluate(
        &self,
        x: &[f32],
        starts: &[usize],
        basis: &[f32],
        mut edges: Option<&mut [f32]>,
    ) -> Vec<f32> {
        let (m, h, nb) = (self.outputs(), self.inputs(), self.grid.num_basis());
        let width = self.grid.order + 1;
        let w = self.base.weight.data();
        let c = self.coeffs.data();
        let mut y = Vec::with_capacity(m);
        for j in 0..m {
            let mut acc = self.base.bias.data()[j];
            for p in 0..h {
                let row = &c[(j * h + p) * nb + starts[p]..][..width];
                let mut spline = 0.0f32;
                for (ci, bi) in row.iter().zip(&basis[p * width..(p + 1) * width]) {
                    spline += ci * bi;
                }
                let a = w[j * h + p] * x[p] + spline;
                if let Some(e) = edges.as_deref_mut() {
                    e[j * h + p] = a;
                }
                acc += a;
            }
            y.push(acc);
        }
        y
    }

    /// Output only; same arithmetic as [`KanLayer::forward`].
    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let (starts, basis) = self.basis_table(x);
        Ok(self.evaluate(x, &starts, &basis, None))
    }

    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f32>, KanCache)> {
        self.check_input(x)?;
        let (starts, basis) = self.basis_table(x);
        let mut edges = vec![0.0f32; self.outputs() * self.inputs()];
        let y = self.evaluate(x, &starts, &basis, Some(&mut edges));
        let cache = KanCache {
            input: x.to_vec(),
            basis_start: starts,
            basis,
            activations: Tensor::matrix(self.outputs(), self.inputs(), edges)
                .expect("sized"),
        };
        Ok((y, cache))
    }

    /// Exact `∂L/∂coeffs[j,p,i] = upstream[j]·B_i(x_p)`; the output is
    /// linear in the coefficients so the value does not depend on them.
    pub fn coeff_grad(&self, x: &[f32], upstream: &[f32]) -> Result<Tensor> {
        let mut grad = Tensor::zeros(self.coeffs.shape());
        self.accumulate_coeff_grad(x, upstream, grad.data_mut())?;
        Ok(grad)
    }

    /// Adds the coefficient gradient for one input into `grad`.
    pub fn accumulate_coeff_grad(&self, x: &[f32], upstream: &[f32], grad: &mut [f32]) -> Result<()> {
        self.check_input(x)?;
        if upstream.len() != self.outputs() || grad.len() != self.coeffs.len() {
            return invalid("upstream or gradient buffer has the wrong size");
        }
        let (starts, basis) = self.basis_table(x);
        self.scatter_grad(&starts, &basis, upstream, grad);
        Ok(())
    }

    /// Gradient accumulation reusing the basis values stored in `cache`.
    pub fn accumulate_cached_grad(&self, cache: &KanCache, upstream: &[f32], grad: &mut [f32]) {
        self.scatter_grad(&cache.basis_start, &cache.basis, upstream, grad);
    }

    fn scatter_grad(&self, starts: &[usize], basis: &[f32], upstream: &[f32], grad: &mut [f32]) {
        let (h, nb) = (self.inputs(), self.grid.num_basis());
        let width = self.grid.order + 1;
        for (j, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            for p in 0..h {
                let dst = &mut grad[(j * h + p) * nb + starts[p]..][..width];
                for (g, b) in dst.iter_mut().zip(&basis[p * width..(p + 1) * width]) {
                    *g += u * b;
                }
            }
        }
    }
}
