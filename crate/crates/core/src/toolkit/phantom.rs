//! Synthetic speckle phantoms: one elliptical hypoechoic lesion on a brighter
//! background, blurred at the boundary and corrupted by multiplicative
//! speckle.

use crate::error::{invalid, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Semi-axis range in pixels.
    pub axis_range: (f32, f32),
    /// Boundary blur standard deviation range in pixels.
    pub blur_range: (f32, f32),
    /// Multiplicative speckle strength range.
    pub speckle_range: (f32, f32),
    pub background: f32,
    pub foreground: f32,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            axis_range: (16.0, 64.0),
            blur_range: (1.0, 4.0),
            speckle_range: (0.05, 0.3),
            background: 0.55,
            foreground: 0.35,
        }
    }
}

impl PhantomConfig {
    /// Square phantom of side `size` with semi-axes scaled to match.
    pub fn sized(size: usize) -> Self {
        let s = size as f32 / 256.0;
        Self {
            height: size,
            width: size,
            axis_range: (16.0 * s, 64.0 * s),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.axis_range, self.blur_range, self.speckle_range];
        if ranges.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return invalid("phantom ranges must be finite and nonempty");
        }
        if self.axis_range.0 < 1.0 || self.blur_range.0 < 0.0 || self.speckle_range.0 < 0.0 {
            return invalid("phantom ranges must be nonnegative with axes of at least one pixel");
        }
        if 2.0 * self.axis_range.1 > self.height.min(self.width) as f32 {
            return invalid(format!(
                "semi-axes up to {} do not fit a {}x{} image",
                self.axis_range.1, self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.background) || !(0.0..=1.0).contains(&self.foreground) {
            return invalid("intensities must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Image in `[0, 1]` and its binary lesion mask; deterministic in `rng`.
pub fn synth_phantom(config: &PhantomConfig, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let a = rng.uniform(config.axis_range.0 as f64, config.axis_range.1 as f64);
    let b = rng.uniform(config.axis_range.0 as f64, config.axis_range.1 as f64);
    let angle = rng.uniform(0.0, std::f64::consts::PI);
    let reach = a.max(b);
    let cx = rng.uniform(reach, w as f64 - reach);
    let cy = rng.uniform(reach, h as f64 - reach);
    let blur = rng.uniform(config.blur_range.0 as f64, config.blur_range.1 as f64);
    let speckle = rng.uniform(config.speckle_range.0 as f64, config.speckle_range.1 as f64) as f32;

    let (sin, cos) = angle.sin_cos();
    let mut mask = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                mask[y * w + x] = 1.0;
            }
        }
    }
    let mut image: Vec<f32> = mask
        .iter()
        .map(|&m| if m > 0.0 { config.foreground } else { config.background })
        .collect();
    if blur > 0.0 {
        image = gaussian_blur(&image, h, w, blur);
    }
    if speckle > 0.0 {
        for v in &mut image {
            *v = (*v * (1.0 + speckle * rng.next_normal())).clamp(0.0, 1.0);
        }
    }
    Ok((Tensor::matrix(h, w, image)?, Tensor::matrix(h, w, mask)?))
}

/// Separable Gaussian blur with edge clamping, kernel radius `⌈3σ⌉`.
fn gaussian_blur(src: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f32], along_x: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, &kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (sx, sy) = if along_x {
                        ((x as isize + off).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + off).clamp(0, h as isize - 1) as usize)
                    };
                    acc += kv * src[sy * w + sx] as f64;
                }
                out[y * w + x] = (acc / norm) as f32;
            }
        }
        out
    };
    let horizontal = pass(src, true);
    pass(&horizontal, false)
}
