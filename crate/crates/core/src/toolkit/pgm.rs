//! Binary 8-bit PGM (`P5`, maxval 255) images mapped to `[0, 1]` floats.

use std::fs;
use std::path::Path;

use crate::error::{format_err, invalid, Result};
use crate::numerics::Tensor;

/// `round(255·x)` with `x` clamped to `[0, 1]`.
pub fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image.dims2()?;
    if image.data().iter().any(|v| v.is_nan()) {
        return invalid("cannot quantize NaN pixels");
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let field = |pos: &mut usize| -> Result<String> {
        // whitespace and comments before a header token
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            *pos += 1;
        }
        if start == *pos {
            return format_err("PGM header ended early");
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if field(&mut pos)? != "P5" {
        return format_err("not a binary PGM (P5) file");
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let s = field(pos)?;
        s.parse()
            .or_else(|_| format_err(format!("invalid PGM {what} {s:?}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval != 255 {
        return format_err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return format_err("PGM image has zero extent");
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return format_err("missing whitespace after PGM maxval");
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .filter(|&n| n <= bytes.len() - pos)
        .map_or_else(|| format_err("PGM payload is truncated"), Ok)?;
    let data = bytes[pos..pos + n].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::matrix(height, width, data)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}
