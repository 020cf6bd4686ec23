use crate::decoder::{BoxPrompt, DecoderModel};
use crate::error::{format_err, invalid, Result};
use crate::numerics::Tensor;

pub const DEFAULT_KEEP: usize = 4;

/// Per-channel share of positive edge activations and the resulting ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport {
    pub positive_ratio: Tensor,
    /// Channels by descending ratio; ties by ascending index.
    pub ranking: Vec<usize>,
    /// Top-`k` of `ranking`, ascending.
    pub kept: Vec<usize>,
}

impl PruneReport {
    pub fn from_ratios(ratios: Vec<f32>, keep: usize) -> Result<Self> {
        let m = ratios.len();
        if keep == 0 || keep > m {
            return invalid(format!("cannot keep {keep} of {m} channels"));
        }
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return invalid("positive ratios must lie in [0, 1]");
        }
        let mut ranking: Vec<usize> = (0..m).collect();
        // stable sort keeps ascending index order among ties
        ranking.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]));
        let mut kept = ranking[..keep].to_vec();
        kept.sort_unstable();
        Ok(Self {
            positive_ratio: Tensor::vector(ratios),
            ranking,
            kept,
        })
    }

    /// Same ratios and ranking with a different retention count.
    pub fn with_keep(&self, keep: usize) -> Result<Self> {
        Self::from_ratios(self.positive_ratio.data().to_vec(), keep)
    }

    pub fn channels(&self) -> usize {
        self.ranking.len()
    }

    /// `channel,positive_ratio,rank,kept` with one row per channel in index
    /// order; rank 0 is the strongest channel.
    pub fn to_csv(&self) -> String {
        let mut rank = vec![0; self.channels()];
        for (r, &j) in self.ranking.iter().enumerate() {
            rank[j] = r;
        }
        let mut out = String::from("channel,positive_ratio,rank,kept\n");
        for (j, ratio) in self.positive_ratio.data().iter().enumerate() {
            let kept = self.kept.binary_search(&j).is_ok() as u8;
            out.push_str(&format!("{j},{ratio},{},{kept}\n", rank[j]));
        }
        out
    }

    /// Reads the ratios back from [`to_csv`](Self::to_csv) output and ranks
    /// them again with a fresh retention count.
    pub fn from_csv(text: &str, keep: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim().starts_with("channel,positive_ratio") => {}
            _ => return format_err("report is missing its channel,positive_ratio header"),
        }
        let mut ratios = Vec::new();
        for (row, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let (Some(ch), Some(ratio)) = (fields.next(), fields.next()) else {
                return format_err(format!("report row {row} has too few fields"));
            };
            if ch.trim().parse::<usize>().ok() != Some(row) {
                return format_err(format!("report row {row} names channel {ch:?}"));
            }
            let Ok(r) = ratio.trim().parse::<f32>() else {
                return format_err(format!("report row {row} has ratio {ratio:?}"));
            };
            ratios.push(r);
        }
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return format_err("report ratios must lie in [0, 1]");
        }
        Self::from_ratios(ratios, keep)
    }
}

/// Fraction of per-edge KAN activations `a_jp > 0` for every output channel
/// `j`, over all dataset items and all inputs `p`.
pub fn positive_ratio(
    model: &DecoderModel,
    dataset: &[(Tensor, BoxPrompt)],
    keep: usize,
) -> Result<PruneReport> {
    if dataset.is_empty() {
        return invalid("positive ratio needs at least one image");
    }
    if model.hyper_map.kan().is_none() {
        return invalid("positive ratio needs the KAN hyper-map variant");
    }
    let m = model.dims.channels;
    let h = model.dims.hyper_hidden;
    let mut positive = vec![0u64; m];
    for (image, prompt) in dataset {
        let enc = model.encode(image, prompt)?;
        let token = model.generate_token(&enc.context)?;
        let (_, cache) = model
            .hyper_map
            .forward_kan(token.data())?
            .expect("checked variant");
        for (j, row) in cache.activations.data().chunks_exact(h).enumerate() {
            positive[j] += row.iter().filter(|&&a| a > 0.0).count() as u64;
        }
    }
    let total = (dataset.len() * h) as f64;
    let ratios = positive.iter().map(|&c| (c as f64 / total) as f32).collect();
    PruneReport::from_ratios(ratios, keep)
}

/// A copy of `model` that only combines the report's kept channels.
pub fn prune(model: &DecoderModel, report: &PruneReport) -> Result<DecoderModel> {
    let m = model.dims.channels;
    if report.channels() != m {
        return invalid(format!(
            "report covers {} channels, model has {m}",
            report.channels()
        ));
    }
    if report.kept.is_empty() {
        return invalid("report keeps no channels");
    }
    let mut mask = vec![false; m];
    for &j in &report.kept {
        if j >= m {
            return invalid(format!("kept channel {j} out of range"));
        }
        mask[j] = true;
    }
    model.clone().with_prune_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let report = PruneReport::from_ratios(vec![0.1, 0.7, 0.7, 1.0 / 3.0], 2).unwrap();
        let text = report.to_csv();
        assert!(text.starts_with("channel,positive_ratio,rank,kept\n0,0.1,3,0\n1,0.7,0,1\n2,0.7,1,1\n"));
        assert_eq!(PruneReport::from_csv(&text, 2).unwrap(), report);
        assert_eq!(PruneReport::from_csv(&text, 3).unwrap().kept, vec![1, 2, 3]);
        assert!(PruneReport::from_csv("nope\n", 1).is_err());
        assert!(PruneReport::from_csv("channel,positive_ratio\n1,0.5\n", 1).is_err());
        assert!(PruneReport::from_csv("channel,positive_ratio\n0,1.5\n", 1).is_err());
    }
    use crate::decoder::DecoderDims;
    use crate::numerics::{Linear, RngStream};
    use crate::sokan::{HyperHead, HyperMapVariant, KanLayer, SplineGrid};

    fn dims() -> DecoderDims {
        DecoderDims {
            token_dim: 8,
            channels: 4,
            feature_dim: 6,
            hyper_hidden: 6,
            patch: 4,
        }
    }

    fn dataset(n: usize, seed: u64) -> Vec<(Tensor, BoxPrompt)> {
        let mut rng = RngStream::new(seed, 3);
        (0..n)
            .map(|_| {
                let img = Tensor::matrix(8, 8, (0..64).map(|_| rng.uniform_f32(0., 1.)).collect()).unwrap();
                (img, BoxPrompt::new(1, 2, 7, 6))
            })
            .collect()
    }

    /// Model whose hidden activations are all exactly `tanh(1)` > 0, with a
    /// KAN base chosen per edge so activation signs are known in advance.
    fn crafted(base_weight: Vec<f32>) -> DecoderModel {
        let d = dims();
        let base = DecoderModel::random(d, 1, HyperMapVariant::Kan);
        let hidden = Linear {
            weight: Tensor::zeros(&[d.hyper_hidden, d.token_dim]),
            bias: Tensor::full(&[d.hyper_hidden], 1.0),
        };
        let head = Linear {
            weight: Tensor::matrix(d.channels, d.hyper_hidden, base_weight).unwrap(),
            bias: Tensor::zeros(&[d.channels]),
        };
        let kan = KanLayer::from_base(head, SplineGrid::default());
        base.with_hyper_map(crate::sokan::HyperMap::new(hidden, HyperHead::Kan(kan)).unwrap())
            .unwrap()
    }

    #[test]
    fn crafted_sign_patterns() {
        let h = dims().hyper_hidden;
        let mut w = Vec::new();
        w.extend(vec![1.0; h]); // all positive
        w.extend(vec![-1.0; h]); // all negative
        w.extend((0..h).map(|p| if p % 2 == 0 { 1.0 } else { -1.0 })); // half
        w.extend((0..h).map(|p| if p < 2 { 1.0 } else { -1.0 })); // one third
        let model = crafted(w);
        let report = positive_ratio(&model, &dataset(3, 0), 2).unwrap();
        assert_eq!(report.positive_ratio.data(), &[1.0, 0.0, 0.5, 2.0 / 6.0]);
        assert_eq!(report.ranking, vec![0, 2, 3, 1]);
        assert_eq!(report.kept, vec![0, 2]);
    }

    #[test]
    fn ties_break_by_index() {
        let r = PruneReport::from_ratios(vec![0.5, 0.7, 0.5, 0.7, 0.1], 3).unwrap();
        assert_eq!(r.ranking, vec![1, 3, 0, 2, 4]);
        assert_eq!(r.kept, vec![0, 1, 3]);
        assert!(PruneReport::from_ratios(vec![0.5, 0.7], 0).is_err());
        assert!(PruneReport::from_ratios(vec![0.5, 1.7], 1).is_err());
    }

    #[test]
    fn invariant_to_permutation_and_duplication() {
        let model = DecoderModel::random(dims(), 5, HyperMapVariant::Kan);
        let data = dataset(5, 1);
        let base = positive_ratio(&model, &data, 2).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(positive_ratio(&model, &rev, 2).unwrap(), base);
        let doubled: Vec<_> = data.iter().chain(data.iter()).cloned().collect();
        assert_eq!(positive_ratio(&model, &doubled, 2).unwrap(), base);
    }

    #[test]
    fn rejects_empty_dataset_and_plain_variant() {
        let model = DecoderModel::random(dims(), 5, HyperMapVariant::Kan);
        assert!(positive_ratio(&model, &[], 2).is_err());
        let plain = DecoderModel::random(dims(), 5, HyperMapVariant::PlainMlp);
        assert!(positive_ratio(&plain, &dataset(1, 0), 2).is_err());
    }

    #[test]
    fn keeping_everything_changes_nothing() {
        let model = DecoderModel::random(dims(), 6, HyperMapVariant::Kan);
        let report = PruneReport::from_ratios(vec![0.2, 0.3, 0.4, 0.5], 4).unwrap();
        assert_eq!(prune(&model, &report).unwrap(), model);
    }

    #[test]
    fn pruning_zero_weight_channels_keeps_mask() {
        let model = DecoderModel::random(dims(), 7, HyperMapVariant::PlainMlp);
        let w = [0.8, 0.0, -0.4, 0.0];
        let fixed = model.with_static_weights(&w).unwrap();
        let report = PruneReport::from_ratios(vec![0.9, 0.1, 0.8, 0.2], 2).unwrap();
        let pruned = prune(&fixed, &report).unwrap();
        for (img, prompt) in dataset(3, 2) {
            let enc = fixed.encode(&img, &prompt).unwrap();
            let t = fixed.generate_token(&enc.context).unwrap();
            let a = fixed.mask(&fixed.channel_weights(t.data()).unwrap(), &enc).unwrap();
            let b = pruned.mask(&pruned.channel_weights(t.data()).unwrap(), &enc).unwrap();
            assert!(a.bit_eq(&b));
        }
    }
}
