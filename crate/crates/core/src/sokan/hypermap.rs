use super::kan::{KanCache, KanLayer};
use super::spline::SplineGrid;
use crate::error::{invalid, Result};
use crate::numerics::{Linear, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperMapVariant {
    PlainMlp,
    Kan,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HyperHead {
    Mlp(Linear),
    Kan(KanLayer),
}

/// Token → per-channel weight map: `d → h` affine + tanh, then an `h → m`
/// head that is either plain affine or a KAN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperMap {
    pub hidden: Linear,
    pub head: HyperHead,
}

impl HyperMap {
    pub fn random(token_dim: usize, hidden: usize, channels: usize, rng: &mut RngStream) -> Self {
        let hidden_layer = Linear::random(token_dim, hidden, rng);
        let head = Linear::random(hidden, channels, rng);
        Self {
            hidden: hidden_layer,
            head: HyperHead::Mlp(head),
        }
    }

    pub fn new(hidden: Linear, head: HyperHead) -> Result<Self> {
        let head_in = match &head {
            HyperHead::Mlp(l) => l.inputs(),
            HyperHead::Kan(k) => k.inputs(),
        };
        if head_in != hidden.outputs() {
            return invalid(format!(
                "hyper-map head expects {head_in} inputs but hidden layer emits {}",
                hidden.outputs()
            ));
        }
        Ok(Self { hidden, head })
    }

    pub fn variant(&self) -> HyperMapVariant {
        match self.head {
            HyperHead::Mlp(_) => HyperMapVariant::PlainMlp,
            HyperHead::Kan(_) => HyperMapVariant::Kan,
        }
    }

    pub fn token_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn channels(&self) -> usize {
        self.base().outputs()
    }

    /// The frozen affine head: the MLP layer itself, or the KAN base.
    pub fn base(&self) -> &Linear {
        match &self.head {
            HyperHead::Mlp(l) => l,
            HyperHead::Kan(k) => k.base(),
        }
    }

    pub fn kan(&self) -> Option<&KanLayer> {
        match &self.head {
            HyperHead::Kan(k) => Some(k),
            HyperHead::Mlp(_) => None,
        }
    }

    pub fn kan_mut(&mut self) -> Option<&mut KanLayer> {
        match &mut self.head {
            HyperHead::Kan(k) => Some(k),
            HyperHead::Mlp(_) => None,
        }
    }

    /// KAN variant whose frozen base is this map's final affine layer.
    pub fn to_kan(&self, grid: SplineGrid) -> Self {
        Self {
            hidden: self.hidden.clone(),
            head: HyperHead::Kan(KanLayer::from_base(self.base().clone(), grid)),
        }
    }

    /// Plain-MLP variant built from the frozen base (drops the splines).
    pub fn to_plain(&self) -> Self {
        Self {
            hidden: self.hidden.clone(),
            head: HyperHead::Mlp(self.base().clone()),
        }
    }

    pub fn hidden_activations(&self, token: &[f32]) -> Result<Vec<f32>> {
        Ok(self
            .hidden
            .checked_forward(token)?
            .into_iter()
            .map(f32::tanh)
            .collect())
    }

    pub fn forward(&self, token: &[f32]) -> Result<Vec<f32>> {
        let x = self.hidden_activations(token)?;
        match &self.head {
            HyperHead::Mlp(l) => Ok(l.forward(&x)),
            HyperHead::Kan(k) => k.apply(&x),
        }
    }

    /// Output through the frozen affine base only, ignoring any splines.
    pub fn forward_plain(&self, token: &[f32]) -> Result<Vec<f32>> {
        let x = self.hidden_activations(token)?;
        Ok(self.base().forward(&x))
    }

    /// KAN forward with the activation record; `None` for the MLP variant.
    pub fn forward_kan(&self, token: &[f32]) -> Result<Option<(Vec<f32>, KanCache)>> {
        let Some(k) = self.kan() else {
            return Ok(None);
        };
        let x = self.hidden_activations(token)?;
        k.forward(&x).map(Some)
    }
}
