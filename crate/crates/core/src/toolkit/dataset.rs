//! Directory datasets: `img_%04d.pgm` images with optional `msk_%04d.pgm` masks.

use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{binarize, expand_box};
use super::pgm::{read_pgm, write_pgm};
use super::phantom::{synth_phantom, PhantomConfig};
use crate::decoder::BoxPrompt;
use crate::error::{format_err, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub name: String,
    pub image: Tensor,
    pub mask: Option<Tensor>,
}

impl DatasetItem {
    /// Box from the mask grown by `expand` pixels; the whole image without a
    /// mask (or with an empty one).
    pub fn prompt(&self, expand: usize) -> BoxPrompt {
        let (h, w) = self.image.dims2().expect("images are matrices");
        self.mask
            .as_ref()
            .and_then(|m| expand_box(m, expand).ok())
            .unwrap_or_else(|| BoxPrompt::full(h, w))
    }
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:04}.pgm")
}

pub fn mask_name(index: usize) -> String {
    format!("msk_{index:04}.pgm")
}

/// Images sorted by file name, each paired with its mask when present.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    let dir = dir.as_ref();
    let mut images: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("img_") && n.ends_with(".pgm"))
        })
        .collect();
    images.sort();
    if images.is_empty() {
        return format_err(format!("no img_*.pgm files in {}", dir.display()));
    }
    images
        .into_iter()
        .map(|path| {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            let mask_path = dir.join(name.replacen("img_", "msk_", 1));
            let image = read_pgm(&path)?;
            let mask = if mask_path.exists() {
                let m = binarize(&read_pgm(&mask_path)?);
                if m.shape() != image.shape() {
                    return format_err(format!("{} does not match its image size", mask_path.display()));
                }
                Some(m)
            } else {
                None
            };
            Ok(DatasetItem { name, image, mask })
        })
        .collect()
}

/// Phantom `i` draws from stream `i` of `seed`.
pub fn phantom_set(config: &PhantomConfig, count: usize, seed: u64) -> Result<Vec<(Tensor, Tensor)>> {
    (0..count)
        .map(|i| synth_phantom(config, &mut RngStream::new(seed, i as u64)))
        .collect()
}

pub fn write_phantom_set(dir: impl AsRef<Path>, config: &PhantomConfig, count: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, (image, mask)) in phantom_set(config, count, seed)?.iter().enumerate() {
        write_pgm(dir.join(image_name(i)), image)?;
        write_pgm(dir.join(mask_name(i)), mask)?;
    }
    Ok(())
}
