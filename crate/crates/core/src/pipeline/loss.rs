use crate::decoder::{BoxPrompt, DecoderModel};
use crate::error::{invalid, Result};
use crate::numerics::Tensor;
use crate::toolkit::binarize;

/// Binary label from the frozen plain-MLP path (ties at 0.5 → foreground).
pub fn pseudo_label(model: &DecoderModel, image: &Tensor, prompt: &BoxPrompt) -> Result<Tensor> {
    let enc = model.encode(image, prompt)?;
    let token = model.generate_token(&enc.context)?;
    let weights = model.hyper_map.forward_plain(token.data())?;
    Ok(binarize(&model.mask(&weights, &enc)?))
}

/// `(1 − μ) / (eps + μ)`.
pub fn unw_weight(mu: f64, eps: f64) -> f64 {
    (1.0 - mu) / (eps + mu)
}

/// Uncertainty-weighted squared error: `unw_weight(μ) · mean((pred − pseudo)²)`.
pub fn loss_unw(pred: &Tensor, pseudo: &Tensor, mu: f64, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu) {
        return invalid(format!("normalized uncertainty {mu} outside [0, 1]"));
    }
    if pred.shape() != pseudo.shape() || pred.is_empty() {
        return invalid("prediction and pseudo-label shapes differ");
    }
    let mse = pred
        .data()
        .iter()
        .zip(pseudo.data())
        .map(|(&p, &y)| ((p - y) as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(unw_weight(mu, eps) * mse)
}

/// Squared Euclidean distance between the frozen and KAN outputs.
pub fn loss_feat(original: &[f32], kan: &[f32]) -> Result<f64> {
    if original.len() != kan.len() {
        return invalid("feature vectors differ in length");
    }
    Ok(original
        .iter()
        .zip(kan)
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderDims;
    use crate::numerics::{Linear, RngStream};
    use crate::sokan::{HyperHead, HyperMap, HyperMapVariant};

    #[test]
    fn unw_examples() {
        let pred = Tensor::vector(vec![0.2, 0.9, 0.5]);
        let pseudo = Tensor::vector(vec![0.0, 1.0, 1.0]);
        assert_eq!(loss_unw(&pseudo, &pseudo, 0.3, 1e-6).unwrap(), 0.0);
        let mse = (0.04 + 0.01 + 0.25) / 3.0;
        let got = loss_unw(&pred, &pseudo, 0.5, 1e-6).unwrap();
        assert!((got - 0.999998 * mse).abs() < 1e-7, "{got}");
        assert!((unw_weight(0.5, 1e-6) - 0.999998).abs() < 1e-6);
        assert_eq!(unw_weight(1.0, 1e-6), 0.0);
        assert!(loss_unw(&pred, &pseudo, 1.2, 1e-6).is_err());
        assert!(loss_unw(&pred, &pseudo, -0.1, 1e-6).is_err());
    }

    #[test]
    fn feat_examples() {
        assert_eq!(loss_feat(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(loss_feat(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
        let base = loss_feat(&[0.5, -0.25, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        let scaled = loss_feat(&[1.5, -0.75, 6.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-9);
        assert!(loss_feat(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn half_mask_labels_all_foreground() {
        let dims = DecoderDims {
            token_dim: 4,
            channels: 2,
            feature_dim: 4,
            hyper_hidden: 3,
            patch: 4,
        };
        let model = DecoderModel::random(dims, 1, HyperMapVariant::PlainMlp);
        let zero_head = HyperMap::new(model.hyper_map.hidden.clone(), HyperHead::Mlp(Linear::zeros(3, 2))).unwrap();
        let model = model.with_hyper_map(zero_head).unwrap();
        let mut rng = RngStream::new(1, 1);
        let img = Tensor::matrix(8, 8, (0..64).map(|_| rng.uniform_f32(0., 1.)).collect()).unwrap();
        let label = pseudo_label(&model, &img, &BoxPrompt::full(8, 8)).unwrap();
        assert!(label.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn labels_are_binary_and_idempotent() {
        let model = DecoderModel::random(DecoderDims::default(), 2, HyperMapVariant::Kan);
        let mut rng = RngStream::new(2, 2);
        let img = Tensor::matrix(32, 32, (0..1024).map(|_| rng.uniform_f32(0., 1.)).collect()).unwrap();
        let label = pseudo_label(&model, &img, &BoxPrompt::new(4, 4, 20, 28)).unwrap();
        assert!(label.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(binarize(&label).bit_eq(&label));
    }
}
