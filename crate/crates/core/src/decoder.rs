//! Toy promptable mask decoder.
//!
//! An image and a box prompt are encoded into a pooled context vector and a
//! per-pixel feature matrix `Q` (`(H·W) × m`). A token head turns the context
//! into an output token `t ∈ R^d`; the hyper-map turns the token into channel
//! weights `w ∈ R^m`, and the mask is `sigmoid(Q w)` over unpruned channels.
//! Seen this way the token is an input-dependent weight vector of a linear
//! mask head, which [`DecoderModel::with_static_weights`] makes concrete.

use crate::error::{invalid, Result};
use crate::numerics::{frobenius_norm, matmul, sigmoid, sigmoid_scalar, Linear, RngStream, Tensor};
use crate::sokan::{HyperMap, HyperMapVariant, SplineGrid};

/// Patch mean intensity separating dark from bright in
/// [`DecoderModel::intensity_prior`].
pub const PRIOR_THRESHOLD: f32 = 0.45;
const PRIOR_GAIN: f32 = 20.0;
const PRIOR_LOGIT: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    /// Token width `d`.
    pub token_dim: usize,
    /// Mask channels `m`.
    pub channels: usize,
    /// Feature width `c`.
    pub feature_dim: usize,
    /// Hyper-map hidden width `h`.
    pub hyper_hidden: usize,
    pub patch: usize,
}

impl Default for DecoderDims {
    fn default() -> Self {
        Self {
            token_dim: 256,
            channels: 32,
            feature_dim: 64,
            hyper_hidden: 64,
            patch: 8,
        }
    }
}

/// Box prompt, half-open pixel ranges `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxPrompt {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height {
            Ok(())
        } else {
            invalid(format!("box {self:?} is empty or outside a {height}x{width} image"))
        }
    }

    /// Corners scaled to `[0, 1]`.
    pub fn normalized(&self, height: usize, width: usize) -> [f32; 4] {
        [
            self.x0 as f32 / width as f32,
            self.y0 as f32 / height as f32,
            self.x1 as f32 / width as f32,
            self.y1 as f32 / height as f32,
        ]
    }
}

/// Two affine layers with tanh between: context → token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenHead {
    pub first: Linear,
    pub second: Linear,
}

impl TokenHead {
    pub fn forward(&self, context: &[f32]) -> Result<Vec<f32>> {
        let hidden: Vec<f32> = self
            .first
            .checked_forward(context)?
            .into_iter()
            .map(f32::tanh)
            .collect();
        Ok(self.second.forward(&hidden))
    }

    /// A head that ignores its input and always returns `token`.
    pub fn constant(context_dim: usize, token: &[f32]) -> Self {
        let hidden = context_dim;
        Self {
            first: Linear::zeros(context_dim, hidden),
            second: Linear {
                weight: Tensor::zeros(&[token.len(), hidden]),
                bias: Tensor::vector(token.to_vec()),
            },
        }
    }
}

/// Encoder output for one image/prompt pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub context: Tensor,
    /// `(H·W) × m` per-pixel features.
    pub q: Tensor,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderModel {
    pub dims: DecoderDims,
    pub patch_embed: Linear,
    pub context_mix: Linear,
    pub token_head: TokenHead,
    pub hyper_map: HyperMap,
    pub pixel_proj: Linear,
    prune_mask: Vec<bool>,
}

impl DecoderModel {
    /// Seeded random model; every layer uniform in `±1/√fan_in`.
    pub fn random(dims: DecoderDims, seed: u64, variant: HyperMapVariant) -> Self {
        let mut rng = RngStream::new(seed, 0);
        let c = dims.feature_dim;
        let patch_embed = Linear::random(dims.patch * dims.patch, c, &mut rng);
        let context_mix = Linear::random(c + 4, c, &mut rng);
        let token_head = TokenHead {
            first: Linear::random(c, c, &mut rng),
            second: Linear::random(c, dims.token_dim, &mut rng),
        };
        let mut hyper_map = HyperMap::random(dims.token_dim, dims.hyper_hidden, dims.channels, &mut rng);
        if variant == HyperMapVariant::Kan {
            hyper_map = hyper_map.to_kan(SplineGrid::default());
        }
        let pixel_proj = Linear::random(c, dims.channels, &mut rng);
        Self {
            dims,
            patch_embed,
            context_mix,
            token_head,
            hyper_map,
            pixel_proj,
            prune_mask: vec![true; dims.channels],
        }
    }

    /// Random model with a built-in dark-region detector, a stand-in for a
    /// pretrained decoder: patch feature 0 responds to the patch mean
    /// intensity around [`PRIOR_THRESHOLD`], pixel channel 0 copies it and the
    /// hyper-map biases channel 0 negative, so dark blobs come out as
    /// foreground while the remaining channels keep their random weights.
    pub fn intensity_prior(dims: DecoderDims, seed: u64, variant: HyperMapVariant) -> Self {
        let mut model = Self::random(dims, seed, variant);
        let (p2, c) = (dims.patch * dims.patch, dims.feature_dim);
        let pe = &mut model.patch_embed;
        pe.weight.data_mut()[..p2].fill(PRIOR_GAIN / p2 as f32);
        pe.bias.data_mut()[0] = -PRIOR_GAIN * PRIOR_THRESHOLD;
        let pp = &mut model.pixel_proj;
        pp.weight.data_mut()[..c].fill(0.0);
        pp.weight.data_mut()[0] = 1.0;
        pp.bias.data_mut()[0] = 0.0;
        let base = match &mut model.hyper_map.head {
            crate::sokan::HyperHead::Mlp(l) => l,
            crate::sokan::HyperHead::Kan(k) => k.base_mut(),
        };
        base.bias.data_mut()[0] = -PRIOR_LOGIT;
        model
    }

    /// Assembles a model from parts, checking every shape against `dims`.
    pub fn from_parts(
        dims: DecoderDims,
        patch_embed: Linear,
        context_mix: Linear,
        token_head: TokenHead,
        hyper_map: HyperMap,
        pixel_proj: Linear,
        prune_mask: Vec<bool>,
    ) -> Result<Self> {
        let c = dims.feature_dim;
        let checks = [
            ("patch_embed", &patch_embed, dims.patch * dims.patch, c),
            ("context_mix", &context_mix, c + 4, c),
            ("token_head.first", &token_head.first, c, token_head.first.outputs()),
            ("token_head.second", &token_head.second, token_head.first.outputs(), dims.token_dim),
            ("hyper.hidden", &hyper_map.hidden, dims.token_dim, dims.hyper_hidden),
            ("hyper.base", hyper_map.base(), dims.hyper_hidden, dims.channels),
            ("pixel_proj", &pixel_proj, c, dims.channels),
        ];
        for (name, layer, inputs, outputs) in checks {
            if layer.inputs() != inputs || layer.outputs() != outputs {
                return invalid(format!(
                    "{name} is {}→{}, expected {inputs}→{outputs}",
                    layer.inputs(),
                    layer.outputs()
                ));
            }
        }
        let model = Self {
            dims,
            patch_embed,
            context_mix,
            token_head,
            hyper_map,
            pixel_proj,
            prune_mask: vec![true; dims.channels],
        };
        model.with_prune_mask(prune_mask)
    }

    pub fn prune_mask(&self) -> &[bool] {
        &self.prune_mask
    }

    pub fn kept_channels(&self) -> Vec<usize> {
        kept_indices(&self.prune_mask)
    }

    pub fn with_prune_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.dims.channels {
            return invalid(format!(
                "prune mask has {} entries, model has {} channels",
                mask.len(),
                self.dims.channels
            ));
        }
        if !mask.iter().any(|&k| k) {
            return invalid("prune mask must keep at least one channel");
        }
        self.prune_mask = mask;
        Ok(self)
    }

    pub fn with_hyper_map(mut self, hyper_map: HyperMap) -> Result<Self> {
        if hyper_map.token_dim() != self.dims.token_dim || hyper_map.channels() != self.dims.channels {
            return invalid("hyper-map dimensions do not match the model");
        }
        self.hyper_map = hyper_map;
        Ok(self)
    }

    /// Constant-token construction: the token path emits exactly `weights`
    /// as channel weights for every input, so the decoder reproduces the
    /// static linear mask head `sigmoid(Q · weights)`.
    pub fn with_static_weights(&self, weights: &[f32]) -> Result<Self> {
        if weights.len() != self.dims.channels {
            return invalid(format!(
                "static weights need {} entries, got {}",
                self.dims.channels,
                weights.len()
            ));
        }
        let token = vec![0.0; self.dims.token_dim];
        let head = Linear {
            weight: Tensor::zeros(&[self.dims.channels, self.dims.hyper_hidden]),
            bias: Tensor::vector(weights.to_vec()),
        };
        let hyper_map = HyperMap::new(self.hyper_map.hidden.clone(), crate::sokan::HyperHead::Mlp(head))?;
        let mut model = self.clone();
        model.token_head = TokenHead::constant(self.dims.feature_dim, &token);
        model.hyper_map = hyper_map;
        Ok(model)
    }

    /// Patch features (tanh of the patch embedding), `[patches × c]` row-major.
    fn patch_features(&self, image: &Tensor, height: usize, width: usize) -> Vec<f32> {
        let p = self.dims.patch;
        let (gh, gw) = (height / p, width / p);
        let c = self.dims.feature_dim;
        let px = image.data();
        let mut patch = vec![0.0f32; p * p];
        let mut feats = Vec::with_capacity(gh * gw * c);
        for gy in 0..gh {
            for gx in 0..gw {
                for dy in 0..p {
                    let src = (gy * p + dy) * width + gx * p;
                    patch[dy * p..(dy + 1) * p].copy_from_slice(&px[src..src + p]);
                }
                feats.extend(self.patch_embed.forward(&patch).into_iter().map(f32::tanh));
            }
        }
        feats
    }

    /// Context vector and per-pixel features.
    ///
    /// `Q` is the bilinear (half-pixel-centre) upsampling of the projected
    /// patch features. Projection and upsampling are both linear and the
    /// interpolation weights sum to one, so projecting on the patch grid
    /// first gives the same features at a fraction of the cost.
    pub fn encode(&self, image: &Tensor, prompt: &BoxPrompt) -> Result<Encoded> {
        let (height, width) = image.dims2()?;
        let p = self.dims.patch;
        if height == 0 || width == 0 || height % p != 0 || width % p != 0 {
            return invalid(format!(
                "image {height}x{width} is not a nonzero multiple of the {p}-pixel patch"
            ));
        }
        prompt.validate(height, width)?;
        let (gh, gw) = (height / p, width / p);
        let c = self.dims.feature_dim;
        let m = self.dims.channels;
        let feats = self.patch_features(image, height, width);

        let mut pooled = vec![0.0f64; c];
        for f in feats.chunks_exact(c) {
            for (acc, v) in pooled.iter_mut().zip(f) {
                *acc += *v as f64;
            }
        }
        let n = (gh * gw) as f64;
        let mut mix_in: Vec<f32> = pooled.iter().map(|v| (v / n) as f32).collect();
        mix_in.extend_from_slice(&prompt.normalized(height, width));
        let context = self.context_mix.forward(&mix_in);

        let grid: Vec<f32> = feats
            .chunks_exact(c)
            .flat_map(|f| self.pixel_proj.forward(f))
            .collect();
        let q = upsample_bilinear(&grid, gh, gw, m, p);
        Ok(Encoded {
            context: Tensor::vector(context),
            q: Tensor::matrix(height * width, m, q)?,
            height,
            width,
        })
    }

    pub fn generate_token(&self, context: &Tensor) -> Result<Tensor> {
        Ok(Tensor::vector(self.token_head.forward(context.data())?))
    }

    /// Channel weights for a token through the model's hyper-map.
    pub fn channel_weights(&self, token: &[f32]) -> Result<Vec<f32>> {
        self.hyper_map.forward(token)
    }

    /// `sigmoid(Q w)` over this model's kept channels.
    pub fn mask(&self, weights: &[f32], enc: &Encoded) -> Result<Tensor> {
        mask_from_weights(weights, &enc.q, &self.prune_mask, enc.height, enc.width)
    }

    /// Multiplies spent combining channels into mask logits for one sample.
    pub fn mask_combination_multiplies(&self, pixels: usize) -> usize {
        self.prune_mask.iter().filter(|&&k| k).count() * pixels
    }

    /// Weights of the deterministic decoder plus channel count; used for
    /// parameter accounting.
    pub fn parameter_count(&self) -> usize {
        let lin = |l: &Linear| l.weight.len() + l.bias.len();
        let hyper = lin(&self.hyper_map.hidden)
            + lin(self.hyper_map.base())
            + self.hyper_map.kan().map_or(0, |k| k.coeffs().len());
        lin(&self.patch_embed)
            + lin(&self.context_mix)
            + lin(&self.token_head.first)
            + lin(&self.token_head.second)
            + hyper
            + lin(&self.pixel_proj)
    }
}

pub(crate) fn kept_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(j, &k)| k.then_some(j))
        .collect()
}

/// Upsamples a `gh × gw × m` grid by `factor` with half-pixel-centre
/// bilinear interpolation and edge clamping.
fn upsample_bilinear(grid: &[f32], gh: usize, gw: usize, m: usize, factor: usize) -> Vec<f32> {
    let (height, width) = (gh * factor, gw * factor);
    let axis = |o: usize, n: usize| -> (usize, usize, f32) {
        let src = ((o as f32 + 0.5) / factor as f32 - 0.5).clamp(0.0, (n - 1) as f32);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f32)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, gw)).collect();
    let mut out = vec![0.0f32; height * width * m];
    for y in 0..height {
        let (y0, y1, fy) = axis(y, gh);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let g00 = &grid[(y0 * gw + x0) * m..][..m];
            let g01 = &grid[(y0 * gw + x1) * m..][..m];
            let g10 = &grid[(y1 * gw + x0) * m..][..m];
            let g11 = &grid[(y1 * gw + x1) * m..][..m];
            let dst = &mut out[(y * width + x) * m..][..m];
            for j in 0..m {
                let top = g00[j] * (1.0 - fx) + g01[j] * fx;
                let bottom = g10[j] * (1.0 - fx) + g11[j] * fx;
                dst[j] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Mask logits `z_p = Σ_{kept j} Q[p,j]·w[j]` (ascending `j`) written into `out`.
pub fn logits_into(weights: &[f32], q: &[f32], m: usize, kept: &[usize], out: &mut [f32]) {
    for (z, row) in out.iter_mut().zip(q.chunks_exact(m)) {
        let mut acc = 0.0f32;
        for &j in kept {
            acc += row[j] * weights[j];
        }
        *z = acc;
    }
}

/// `sigmoid(Q w)` restricted to channels with `prune_mask[j]`, shaped `H × W`.
pub fn mask_from_weights(
    weights: &[f32],
    q: &Tensor,
    prune_mask: &[bool],
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let (pixels, m) = q.dims2()?;
    if weights.len() != m || prune_mask.len() != m {
        return invalid(format!(
            "weights ({}) and prune mask ({}) must match {m} channels",
            weights.len(),
            prune_mask.len()
        ));
    }
    if pixels != height * width {
        return invalid(format!("{pixels} feature rows for a {height}x{width} mask"));
    }
    let kept = kept_indices(prune_mask);
    if kept.is_empty() {
        return invalid("prune mask keeps no channels");
    }
    let mut z = vec![0.0f32; pixels];
    logits_into(weights, q.data(), m, &kept, &mut z);
    for v in &mut z {
        *v = sigmoid_scalar(*v);
    }
    Tensor::matrix(height, width, z)
}

/// Both sides of the sigmoid error bound
/// `‖σ(TQᵀ) − σ(WQᵀ)‖_F ≤ ¼·‖T − W‖_F·‖Q‖_F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBound {
    pub lhs: f32,
    pub rhs: f32,
    pub holds: bool,
}

/// Lipschitz constant of the logistic sigmoid.
pub const SIGMOID_LIPSCHITZ: f32 = 0.25;

pub fn verify_error_bound(tokens: &Tensor, weights: &Tensor, q: &Tensor) -> Result<ErrorBound> {
    let (k, d) = tokens.dims2()?;
    if weights.dims2()? != (k, d) {
        return invalid("token and weight matrices differ in shape");
    }
    let (_, dq) = q.dims2()?;
    if dq != d {
        return invalid(format!("features have width {dq}, tokens {d}"));
    }
    let qt = q.transpose()?;
    let from_tokens = sigmoid(&matmul(tokens, &qt)?);
    let from_weights = sigmoid(&matmul(weights, &qt)?);
    let lhs = frobenius_norm(&from_tokens.sub(&from_weights)?);
    let rhs = SIGMOID_LIPSCHITZ * frobenius_norm(&tokens.sub(weights)?) * frobenius_norm(q);
    Ok(ErrorBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-5,
    })
}
