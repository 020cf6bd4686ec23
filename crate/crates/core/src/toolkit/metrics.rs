use crate::decoder::BoxPrompt;
use crate::error::{invalid, Result};
use crate::numerics::Tensor;

/// Pixels at or above 0.5 become 1, the rest 0.
pub fn binarize(probabilities: &Tensor) -> Tensor {
    probabilities.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Dice similarity `2|A∩B| / (|A| + |B|)` of two binary masks (foreground
/// is any value ≥ 0.5). Two empty masks score 1.
pub fn dice(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return invalid(format!(
            "dice of masks with shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (mut inter, mut size_a, mut size_b) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (fa, fb) = (x >= 0.5, y >= 0.5);
        size_a += fa as u64;
        size_b += fb as u64;
        inter += (fa && fb) as u64;
    }
    if size_a + size_b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (size_a + size_b) as f64)
}

/// Bounding box of the mask's foreground grown by `pixels` on every side and
/// clipped to the image.
pub fn expand_box(mask: &Tensor, pixels: usize) -> Result<BoxPrompt> {
    let (h, w) = mask.dims2()?;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.data()[y * w + x] >= 0.5 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 == 0 {
        return invalid("cannot derive a box from an empty mask");
    }
    Ok(BoxPrompt::new(
        x0.saturating_sub(pixels),
        y0.saturating_sub(pixels),
        (x1 + pixels).min(w),
        (y1 + pixels).min(h),
    ))
}
