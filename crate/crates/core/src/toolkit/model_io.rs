//! Model and KAN-layer (de)serialization through [`TensorContainer`].

use std::path::Path;

use super::container::TensorContainer;
use crate::decoder::{DecoderDims, DecoderModel, TokenHead};
use crate::error::{Error, Result};
use crate::numerics::{Linear, Tensor};
use crate::sokan::{HyperHead, HyperMap, KanLayer, SplineGrid};

fn to_format(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::Format(msg),
        other => other,
    }
}

fn push_linear(c: &mut TensorContainer, prefix: &str, l: &Linear) {
    c.push(format!("{prefix}.weight"), l.weight.clone()).expect("unique");
    c.push(format!("{prefix}.bias"), l.bias.clone()).expect("unique");
}

fn read_linear(c: &TensorContainer, prefix: &str) -> Result<Linear> {
    let weight = c.require(&format!("{prefix}.weight"))?.clone();
    let bias = c.require(&format!("{prefix}.bias"))?.clone();
    Linear::new(weight, bias).map_err(to_format)
}

/// Writes the layer under `{prefix}base_weight`, `base_bias`, `grid`, `coeffs`.
pub fn push_kan(c: &mut TensorContainer, prefix: &str, layer: &KanLayer) {
    let entries = [
        ("base_weight", layer.base().weight.clone()),
        ("base_bias", layer.base().bias.clone()),
        ("grid", Tensor::vector(layer.grid().knots())),
        ("coeffs", layer.coeffs().clone()),
    ];
    for (name, t) in entries {
        c.push(format!("{prefix}{name}"), t).expect("unique");
    }
}

pub fn read_kan(c: &TensorContainer, prefix: &str) -> Result<KanLayer> {
    let get = |n: &str| c.require(&format!("{prefix}{n}"));
    let base = Linear::new(get("base_weight")?.clone(), get("base_bias")?.clone()).map_err(to_format)?;
    let coeffs = get("coeffs")?.clone();
    let nb = *coeffs
        .shape()
        .last()
        .ok_or_else(|| Error::Format("coefficients must be rank 3".into()))?;
    let grid = SplineGrid::from_knots(get("grid")?.data(), nb)?;
    KanLayer::from_parts(base, grid, coeffs).map_err(to_format)
}

pub fn kan_to_container(layer: &KanLayer) -> TensorContainer {
    let mut c = TensorContainer::new();
    push_kan(&mut c, "", layer);
    c
}

pub fn kan_from_container(c: &TensorContainer) -> Result<KanLayer> {
    read_kan(c, "")
}

pub fn model_to_container(model: &DecoderModel) -> TensorContainer {
    let d = model.dims;
    let mut c = TensorContainer::new();
    let dims = [d.token_dim, d.channels, d.feature_dim, d.hyper_hidden, d.patch];
    c.push("dims", Tensor::vector(dims.iter().map(|&v| v as f32).collect()))
        .expect("unique");
    push_linear(&mut c, "patch_embed", &model.patch_embed);
    push_linear(&mut c, "context_mix", &model.context_mix);
    push_linear(&mut c, "token_head.0", &model.token_head.first);
    push_linear(&mut c, "token_head.1", &model.token_head.second);
    push_linear(&mut c, "hyper.hidden", &model.hyper_map.hidden);
    match &model.hyper_map.head {
        HyperHead::Mlp(l) => push_linear(&mut c, "hyper.head", l),
        HyperHead::Kan(k) => push_kan(&mut c, "hyper.kan.", k),
    }
    push_linear(&mut c, "pixel_proj", &model.pixel_proj);
    let mask = model.prune_mask().iter().map(|&k| k as u8 as f32).collect();
    c.push("prune_mask", Tensor::vector(mask)).expect("unique");
    c
}

pub fn model_from_container(c: &TensorContainer) -> Result<DecoderModel> {
    let dims = c.require("dims")?;
    let v = dims.data();
    if v.len() != 5 || v.iter().any(|x| !(*x >= 1.0 && x.fract() == 0.0)) {
        return Err(Error::Format("dims must hold five positive integers".into()));
    }
    let dims = DecoderDims {
        token_dim: v[0] as usize,
        channels: v[1] as usize,
        feature_dim: v[2] as usize,
        hyper_hidden: v[3] as usize,
        patch: v[4] as usize,
    };
    let head = if c.get("hyper.kan.coeffs").is_some() {
        HyperHead::Kan(read_kan(c, "hyper.kan.")?)
    } else {
        HyperHead::Mlp(read_linear(c, "hyper.head")?)
    };
    let hyper = HyperMap::new(read_linear(c, "hyper.hidden")?, head).map_err(to_format)?;
    let token_head = TokenHead {
        first: read_linear(c, "token_head.0")?,
        second: read_linear(c, "token_head.1")?,
    };
    let mask: Vec<bool> = c.require("prune_mask")?.data().iter().map(|&v| v != 0.0).collect();
    DecoderModel::from_parts(
        dims,
        read_linear(c, "patch_embed")?,
        read_linear(c, "context_mix")?,
        token_head,
        hyper,
        read_linear(c, "pixel_proj")?,
        mask,
    )
    .map_err(to_format)
}

pub fn save_model(path: impl AsRef<Path>, model: &DecoderModel) -> Result<()> {
    model_to_container(model).write(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecoderModel> {
    model_from_container(&TensorContainer::read(path)?)
}
