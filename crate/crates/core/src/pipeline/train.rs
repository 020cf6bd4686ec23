use std::io::Write;

use super::adamw::{adamw_step, AdamState};
use super::augment::{augment, AugmentParams};
use super::loss::{loss_feat, unw_weight};
use crate::decoder::{kept_indices, logits_into, BoxPrompt, DecoderModel};
use crate::error::{invalid, Error, Result};
use crate::numerics::{sigmoid_scalar, RngStream, Tensor};
use crate::sokan::HyperMapVariant;
use crate::toolkit::{binarize, expand_box};
use crate::tvbi::{collect_tokens, compute_token_stats, sample_token, PixelMoments, TokenStats};

// per-stage streams of the training seed
const SELECT_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub loss_eps: f64,
    pub k_train: usize,
    /// Pixels added around the region's bounding box to form the prompt.
    pub expand: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1,
            max_iterations: 2000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            loss_eps: 1e-6,
            k_train: 10,
            expand: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("loss_eps", self.loss_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return invalid(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return invalid("weight_decay must be nonnegative");
        }
        if self.batch_size == 0 || self.k_train == 0 {
            return invalid("batch_size and k_train must be at least 1");
        }
        Ok(())
    }
}

/// One line of the loss trace (batch means for batches larger than one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub l_unw: f64,
    pub l_feat: f64,
    pub total: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DecoderModel,
    pub trace: Vec<TraceRow>,
    /// Phase-one statistics the uncertainty weights were computed with.
    pub stats: TokenStats,
}

pub fn write_trace(mut out: impl Write, trace: &[TraceRow]) -> Result<()> {
    writeln!(out, "iteration,l_unw,l_feat,total,mu")?;
    for r in trace {
        writeln!(out, "{},{},{},{},{}", r.iteration, r.l_unw, r.l_feat, r.total, r.mu)?;
    }
    Ok(())
}

/// Prompt box for a training item: the region's bounding box grown by
/// `expand`, or the whole image when the region is empty.
fn region_prompt(region: &Tensor, expand: usize) -> Result<BoxPrompt> {
    let (h, w) = region.dims2()?;
    if region.data().iter().any(|&v| v >= 0.5) {
        expand_box(region, expand)
    } else {
        Ok(BoxPrompt::full(h, w))
    }
}

/// Self-supervised adaptation of the spline coefficients.
///
/// `items` pairs each unlabeled image with a region map used only to place
/// the box prompt (it follows the geometric augmentation). Token statistics
/// are gathered from the clean items with the input model and stay fixed.
pub fn train_sokan(model: &DecoderModel, items: &[(Tensor, Tensor)], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if items.is_empty() {
        return invalid("training set is empty");
    }
    if model.hyper_map.variant() != HyperMapVariant::Kan {
        return invalid("training needs the KAN hyper-map variant");
    }
    let prompts: Vec<(Tensor, BoxPrompt)> = items
        .iter()
        .map(|(img, region)| Ok((img.clone(), region_prompt(region, config.expand)?)))
        .collect::<Result<_>>()?;
    let stats = compute_token_stats(&collect_tokens(model, &prompts)?)?;

    let mut model = model.clone();
    let mut select = RngStream::new(config.seed, SELECT_STREAM);
    let mut aug_rng = RngStream::new(config.seed, AUGMENT_STREAM);
    let mut sample_seeds = RngStream::new(config.seed, SAMPLE_STREAM);
    let n_coeffs = model.hyper_map.kan().expect("kan variant").coeffs().len();
    let mut adam = AdamState::new(n_coeffs);
    let mut trace = Vec::with_capacity(config.max_iterations);

    for iteration in 0..config.max_iterations {
        let mut grad = vec![0.0f32; n_coeffs];
        let mut row = TraceRow {
            iteration,
            l_unw: 0.0,
            l_feat: 0.0,
            total: 0.0,
            mu: 0.0,
        };
        for _ in 0..config.batch_size {
            let (image, region) = &items[select.below(items.len())];
            let params = AugmentParams::sample(&mut aug_rng);
            let (image, region) = augment(image, region, &params, &mut aug_rng)?;
            let prompt = region_prompt(&region, config.expand)?;
            let seed = sample_seeds.next_u64();
            let step = train_step(&model, &image, &prompt, &stats, config, seed, &mut grad)?;
            row.l_unw += step.0;
            row.l_feat += step.1;
            row.mu += step.2;
        }
        let b = config.batch_size as f64;
        row.l_unw /= b;
        row.l_feat /= b;
        row.mu /= b;
        row.total = row.l_unw + row.l_feat;
        if !row.total.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at iteration {iteration}")));
        }
        trace.push(row);

        let scale = 1.0 / config.batch_size as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
        let kan = model.hyper_map.kan_mut().expect("kan variant");
        adamw_step(kan.coeffs_mut().data_mut(), &grad, &mut adam, config)?;
    }
    Ok(TrainOutcome { model, trace, stats })
}

/// Losses for one augmented view; adds its coefficient gradient to `grad`.
/// Returns `(l_unw, l_feat, mu)`.
fn train_step(
    model: &DecoderModel,
    image: &Tensor,
    prompt: &BoxPrompt,
    stats: &TokenStats,
    config: &TrainConfig,
    seed: u64,
    grad: &mut [f32],
) -> Result<(f64, f64, f64)> {
    let hyper = &model.hyper_map;
    let kan = hyper.kan().expect("kan variant");
    let enc = model.encode(image, prompt)?;
    let token = model.generate_token(&enc.context)?;
    let m = model.dims.channels;
    let kept = kept_indices(model.prune_mask());
    let pixels = enc.height * enc.width;
    let q = enc.q.data();

    // teacher: frozen affine base on the same view
    let w_orig = hyper.forward_plain(token.data())?;
    let pseudo = binarize(&model.mask(&w_orig, &enc)?);
    let (w_kan, cache) = hyper.forward_kan(token.data())?.expect("kan variant");
    let l_feat = loss_feat(&w_orig, &w_kan)?;
    let feat_up: Vec<f32> = w_kan.iter().zip(&w_orig).map(|(a, b)| 2.0 * (a - b)).collect();
    kan.accumulate_cached_grad(&cache, &feat_up, grad);

    // μ measures how far the pseudo-label can be trusted, so it comes from
    // the teacher's samples; the student's samples share the same noise
    let k = config.k_train;
    let mut probs = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    let mut student = PixelMoments::new(pixels);
    let mut teacher = PixelMoments::new(pixels);
    let mut s = vec![0.0f32; pixels];
    for i in 0..k {
        let mut rng = RngStream::new(seed, i as u64);
        let noisy = sample_token(token.data(), stats, &mut rng)?;
        let x = hyper.hidden_activations(&noisy)?;
        logits_into(&kan.base().forward(&x), q, m, &kept, &mut s);
        s.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        teacher.push(&s);
        let (w, c) = kan.forward(&x)?;
        logits_into(&w, q, m, &kept, &mut s);
        s.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        student.push(&s);
        probs.push(s.clone());
        caches.push(c);
    }
    let pred = student.finish(enc.height, enc.width)?;
    let teacher_u = teacher.finish(enc.height, enc.width)?.uncertainty;
    let mean_u = teacher_u.data().iter().map(|&u| u as f64).sum::<f64>() / pixels as f64;
    let mu = (mean_u / 0.5).clamp(0.0, 1.0);
    let weight = unw_weight(mu, config.loss_eps);

    let mut sq = 0.0f64;
    let mut d_pred = vec![0.0f64; pixels];
    for ((d, &y), &t) in d_pred.iter_mut().zip(pred.mean_mask.data()).zip(pseudo.data()) {
        let r = (y - t) as f64;
        sq += r * r;
        *d = weight * 2.0 * r / pixels as f64;
    }
    let l_unw = weight * sq / pixels as f64;

    for (s, c) in probs.iter().zip(&caches) {
        let mut gw = vec![0.0f64; m];
        for ((&dp, &sp), row) in d_pred.iter().zip(s).zip(q.chunks_exact(m)) {
            let dz = dp * (sp * (1.0 - sp)) as f64 / k as f64;
            if dz == 0.0 {
                continue;
            }
            for &j in &kept {
                gw[j] += dz * row[j] as f64;
            }
        }
        let up: Vec<f32> = gw.iter().map(|&g| g as f32).collect();
        kan.accumulate_cached_grad(c, &up, grad);
    }
    Ok((l_unw, l_feat, mu))
}
