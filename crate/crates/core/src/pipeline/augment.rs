use crate::error::{invalid, Result};
use crate::numerics::{RngStream, Tensor};

/// One draw of the photometric and geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f32,
    /// Degrees, counter-clockwise.
    pub rotation: f32,
    pub gamma: f32,
    pub brightness: f32,
    /// Additive noise std; 0 disables the noise stage.
    pub noise_sigma: f32,
}

impl AugmentParams {
    pub const SCALE: (f32, f32) = (0.75, 1.25);
    pub const ROTATION: (f32, f32) = (-45.0, 45.0);
    pub const GAMMA: (f32, f32) = (0.5, 1.5);
    pub const BRIGHTNESS: (f32, f32) = (-0.1, 0.1);
    pub const NOISE: (f32, f32) = (0.01, 0.2);

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            gamma: 1.0,
            brightness: 0.0,
            noise_sigma: 0.0,
        }
    }

    /// Uniform draw from every range.
    pub fn sample(rng: &mut RngStream) -> Self {
        let mut draw = |(lo, hi): (f32, f32)| rng.uniform_f32(lo, hi);
        Self {
            scale: draw(Self::SCALE),
            rotation: draw(Self::ROTATION),
            gamma: draw(Self::GAMMA),
            brightness: draw(Self::BRIGHTNESS),
            noise_sigma: draw(Self::NOISE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |v: f32, (lo, hi): (f32, f32)| (lo..=hi).contains(&v);
        let checks = [
            ("scale", self.scale, Self::SCALE),
            ("rotation", self.rotation, Self::ROTATION),
            ("gamma", self.gamma, Self::GAMMA),
            ("brightness", self.brightness, Self::BRIGHTNESS),
        ];
        for (name, v, range) in checks {
            if !within(v, range) {
                return invalid(format!("{name} {v} outside [{}, {}]", range.0, range.1));
            }
        }
        if self.noise_sigma != 0.0 && !within(self.noise_sigma, Self::NOISE) {
            return invalid(format!("noise_sigma {} is neither 0 nor in [0.01, 0.2]", self.noise_sigma));
        }
        Ok(())
    }
}

/// Applies scale and rotation about the image centre as a single inverse
/// map (bilinear for the image, nearest for the mask, zero outside), then
/// gamma, brightness and additive noise to the image only.
pub fn augment(image: &Tensor, mask: &Tensor, params: &AugmentParams, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
    params.validate()?;
    let (h, w) = image.dims2()?;
    if mask.shape() != image.shape() {
        return invalid("image and mask shapes differ");
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("image values must lie in [0, 1]");
    }
    let src = image.data();
    let msk = mask.data();
    let (sin, cos) = (params.rotation as f64).to_radians().sin_cos();
    let inv_scale = 1.0 / params.scale as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let pixel = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            src[y as usize * w + x as usize]
        }
    };

    let mut out_img = vec![0.0f32; h * w];
    let mut out_mask = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // continuous source position in pixel-centre coordinates
            let sx = cx + (cos * dx + sin * dy) * inv_scale - 0.5;
            let sy = cy + (-sin * dx + cos * dy) * inv_scale - 0.5;

            let (fx0, fy0) = (sx.floor(), sy.floor());
            let (ax, ay) = ((sx - fx0) as f32, (sy - fy0) as f32);
            let (ix, iy) = (fx0 as isize, fy0 as isize);
            let mut v = pixel(ix, iy) * (1.0 - ax) * (1.0 - ay);
            if ax != 0.0 {
                v += pixel(ix + 1, iy) * ax * (1.0 - ay);
            }
            if ay != 0.0 {
                v += pixel(ix, iy + 1) * (1.0 - ax) * ay;
                if ax != 0.0 {
                    v += pixel(ix + 1, iy + 1) * ax * ay;
                }
            }
            out_img[y * w + x] = v;

            let (nx, ny) = ((sx + 0.5).floor(), (sy + 0.5).floor());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                out_mask[y * w + x] = if msk[ny as usize * w + nx as usize] >= 0.5 { 1.0 } else { 0.0 };
            }
        }
    }

    for v in &mut out_img {
        if params.gamma != 1.0 {
            *v = v.powf(params.gamma);
        }
        if params.brightness != 0.0 {
            *v = (*v + params.brightness).clamp(0.0, 1.0);
        }
        if params.noise_sigma != 0.0 {
            *v = (*v + params.noise_sigma * rng.next_normal()).clamp(0.0, 1.0);
        }
    }
    Ok((Tensor::matrix(h, w, out_img)?, Tensor::matrix(h, w, out_mask)?))
}
