//! Token-wise variational inference.
//!
//! Phase one gathers the per-dimension population standard deviation of the
//! decoder's output token over an unlabeled corpus. Phase two treats the
//! predicted token as the mean of a diagonal Gaussian with those deviations,
//! draws `K` reparameterized tokens `t + σ ⊙ ε`, decodes each to a mask and
//! reports the per-pixel mean and population standard deviation.
//!
//! Sample `i` always draws from stream `i` of the caller's seed and the
//! per-pixel reductions run in sample order, so serial and parallel
//! inference agree bit-for-bit.

use rayon::prelude::*;

use crate::decoder::{kept_indices, logits_into, BoxPrompt, DecoderModel, Encoded};
use crate::error::{invalid, Error, Result};
use crate::numerics::{column_mean_std, sigmoid_scalar, RngStream, Tensor};
use crate::toolkit::container::TensorContainer;

pub const DEFAULT_SAMPLES: usize = 10;

/// Samples decoded concurrently per batch by [`infer_parallel`].
const PARALLEL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TokenStats {
    pub sigma: Tensor,
    /// Diagnostic only; inference centres samples on the predicted token.
    pub mean: Tensor,
    pub count: usize,
}

impl TokenStats {
    pub fn zeros(token_dim: usize) -> Self {
        Self {
            sigma: Tensor::zeros(&[token_dim]),
            mean: Tensor::zeros(&[token_dim]),
            count: 1,
        }
    }

    pub fn token_dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            sigma: self.sigma.scale(factor),
            ..self.clone()
        }
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        c.push("sigma", self.sigma.clone()).expect("fresh name");
        c.push("mean", self.mean.clone()).expect("fresh name");
        c.push("count", Tensor::scalar(self.count as f32)).expect("fresh name");
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let sigma = c.require("sigma")?.clone();
        let mean = c.require("mean")?.clone();
        let count = c.require("count")?;
        if sigma.rank() != 1 || mean.shape() != sigma.shape() || count.len() != 1 {
            return Err(Error::Format("token statistics have inconsistent shapes".into()));
        }
        let n = count.data()[0];
        if !(n >= 1.0 && n.fract() == 0.0) {
            return Err(Error::Format(format!("invalid sample count {n}")));
        }
        if sigma.data().iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Format("sigma must be finite and nonnegative".into()));
        }
        Ok(Self {
            sigma,
            mean,
            count: n as usize,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPrediction {
    pub mean_mask: Tensor,
    pub uncertainty: Tensor,
    pub samples_used: usize,
}

/// Column population statistics of an `N × d` token matrix.
pub fn compute_token_stats(tokens: &Tensor) -> Result<TokenStats> {
    let (n, _) = tokens.dims2()?;
    let (mean, sigma) = column_mean_std(tokens)?;
    Ok(TokenStats {
        sigma,
        mean,
        count: n,
    })
}

/// Output tokens of `model` for each image/prompt pair, stacked `N × d`.
pub fn collect_tokens(model: &DecoderModel, items: &[(Tensor, BoxPrompt)]) -> Result<Tensor> {
    let d = model.dims.token_dim;
    let mut rows = Vec::with_capacity(items.len() * d);
    for (image, prompt) in items {
        let enc = model.encode(image, prompt)?;
        rows.extend_from_slice(model.generate_token(&enc.context)?.data());
    }
    Tensor::matrix(items.len(), d, rows)
}

/// Reparameterized draw `t + σ ⊙ ε`, `ε ~ N(0, I)` from `rng`.
pub fn sample_token(token: &[f32], stats: &TokenStats, rng: &mut RngStream) -> Result<Vec<f32>> {
    if token.len() != stats.token_dim() {
        return invalid(format!(
            "token width {} does not match sigma width {}",
            token.len(),
            stats.token_dim()
        ));
    }
    Ok(token
        .iter()
        .zip(stats.sigma.data())
        .map(|(&t, &s)| t + s * rng.next_normal())
        .collect())
}

/// Mask of the noise-free token; the σ = 0 baseline.
pub fn deterministic_mask(model: &DecoderModel, image: &Tensor, prompt: &BoxPrompt) -> Result<Tensor> {
    let enc = model.encode(image, prompt)?;
    let token = model.generate_token(&enc.context)?;
    model.mask(&model.channel_weights(token.data())?, &enc)
}

/// Monte-Carlo mean mask and uncertainty with `k` token samples, serially.
pub fn infer(
    model: &DecoderModel,
    image: &Tensor,
    prompt: &BoxPrompt,
    stats: &TokenStats,
    k: usize,
    seed: u64,
) -> Result<MaskPrediction> {
    let enc = model.encode(image, prompt)?;
    let token = model.generate_token(&enc.context)?;
    infer_encoded(model, &enc, token.data(), stats, k, seed, false)
}

/// As [`infer`], decoding samples on the rayon pool; bit-identical results.
pub fn infer_parallel(
    model: &DecoderModel,
    image: &Tensor,
    prompt: &BoxPrompt,
    stats: &TokenStats,
    k: usize,
    seed: u64,
) -> Result<MaskPrediction> {
    let enc = model.encode(image, prompt)?;
    let token = model.generate_token(&enc.context)?;
    infer_encoded(model, &enc, token.data(), stats, k, seed, true)
}

/// Probability mask of sample `index` (stream `index` of `seed`).
pub(crate) fn sample_mask(
    model: &DecoderModel,
    enc: &Encoded,
    token: &[f32],
    stats: &TokenStats,
    kept: &[usize],
    seed: u64,
    index: usize,
) -> Result<Vec<f32>> {
    let mut rng = RngStream::new(seed, index as u64);
    let noisy = sample_token(token, stats, &mut rng)?;
    let w = model.channel_weights(&noisy)?;
    let mut y = vec![0.0f32; enc.height * enc.width];
    logits_into(&w, enc.q.data(), model.dims.channels, kept, &mut y);
    for v in &mut y {
        *v = sigmoid_scalar(*v);
    }
    Ok(y)
}

/// Running per-pixel mean and squared deviation (Welford, `f64`).
pub(crate) struct PixelMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PixelMoments {
    pub(crate) fn new(pixels: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; pixels],
            m2: vec![0.0; pixels],
        }
    }

    pub(crate) fn push(&mut self, sample: &[f32]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), &y) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let y = y as f64;
            let delta = y - *mu;
            *mu += delta / n;
            *m2 += delta * (y - *mu);
        }
    }

    pub(crate) fn finish(&self, height: usize, width: usize) -> Result<MaskPrediction> {
        let k = self.count as f64;
        let mean = self.mean.iter().map(|&m| m as f32).collect();
        let unc = self
            .m2
            .iter()
            .map(|&m2| ((m2 / k).max(0.0).sqrt() as f32).min(0.5))
            .collect();
        Ok(MaskPrediction {
            mean_mask: Tensor::matrix(height, width, mean)?,
            uncertainty: Tensor::matrix(height, width, unc)?,
            samples_used: self.count,
        })
    }
}

/// Monte-Carlo decoding from an already encoded image and its token.
pub fn infer_encoded(
    model: &DecoderModel,
    enc: &Encoded,
    token: &[f32],
    stats: &TokenStats,
    k: usize,
    seed: u64,
    parallel: bool,
) -> Result<MaskPrediction> {
    if k == 0 {
        return invalid("at least one Monte-Carlo sample is required");
    }
    if stats.token_dim() != model.dims.token_dim {
        return invalid(format!(
            "statistics cover {} token dimensions, model emits {}",
            stats.token_dim(),
            model.dims.token_dim
        ));
    }
    let kept = kept_indices(model.prune_mask());
    let mut moments = PixelMoments::new(enc.height * enc.width);
    if parallel {
        for start in (0..k).step_by(PARALLEL_BATCH) {
            let end = (start + PARALLEL_BATCH).min(k);
            let batch: Vec<Vec<f32>> = (start..end)
                .into_par_iter()
                .map(|i| sample_mask(model, enc, token, stats, &kept, seed, i))
                .collect::<Result<_>>()?;
            for y in &batch {
                moments.push(y);
            }
        }
    } else {
        for i in 0..k {
            moments.push(&sample_mask(model, enc, token, stats, &kept, seed, i)?);
        }
    }
    moments.finish(enc.height, enc.width)
}
