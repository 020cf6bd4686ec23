//! Deterministic numeric substrate: dense tensors, seeded random streams,
//! elementwise math and reductions.
//!
//! All reductions run in a fixed index order so results are reproducible
//! bit-for-bit across runs and thread counts.

mod linear;
mod rng;
mod tensor;

pub use linear::Linear;
pub use rng::{box_muller, normal_sample, RngStream};
pub use tensor::Tensor;

use crate::error::{invalid, Result};

/// Matrix product `a · b` with `f32` accumulation in index order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return invalid(format!("matmul inner extents differ: {m}x{k} · {k2}x{n}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (j, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += ad[i * k + p] * bd[p * n + j];
            }
            *o = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Per-column mean and population standard deviation (divisor `N`) of an
/// `N×d` matrix. Two-pass, accumulated in `f64`.
pub fn column_mean_std(rows: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, d) = rows.dims2()?;
    if n == 0 {
        return invalid("column statistics need at least one row");
    }
    let data = rows.data();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += data[i * d + j] as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; d];
    for i in 0..n {
        for j in 0..d {
            let dev = data[i * d + j] as f64 - mean[j];
            var[j] += dev * dev;
        }
    }
    let std = var.iter().map(|v| (v / n as f64).sqrt() as f32).collect();
    let mean = mean.iter().map(|&m| m as f32).collect();
    Ok((Tensor::vector(mean), Tensor::vector(std)))
}

pub fn frobenius_norm(a: &Tensor) -> f32 {
    a.data()
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt() as f32
}
