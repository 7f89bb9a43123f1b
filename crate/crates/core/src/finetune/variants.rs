use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ProbeQuestion;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerWeights};
use crate::surgery::{mask_count, CoefficientPositions, MeanCoefficients};

/// Which value vectors a fine-tune may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantKind {
    /// Every value vector (FT-FV).
    #[serde(rename = "ft-fv")]
    Full,
    /// The top-ranked vectors for the new concepts (FT-PV).
    #[serde(rename = "ft-pv")]
    Top,
    /// Everything the top-ranked selection leaves out (FT-CV).
    #[serde(rename = "ft-cv")]
    Complement,
    /// A uniform random selection of the top-ranked size (FT-RV).
    #[serde(rename = "ft-rv")]
    Random,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [Self::Full, Self::Top, Self::Complement, Self::Random];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "ft-fv",
            Self::Top => "ft-pv",
            Self::Complement => "ft-cv",
            Self::Random => "ft-rv",
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ft-fv" | "fv" => Ok(Self::Full),
            "ft-pv" | "pv" => Ok(Self::Top),
            "ft-cv" | "cv" => Ok(Self::Complement),
            "ft-rv" | "rv" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown fine-tuning variant {s:?}"))),
        }
    }
}

/// How the top-ranked selection orders value vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRanking {
    /// `|m̄_j − m̄*_j|` between new-concept and irrelevant questions.
    #[default]
    Contrastive,
    /// Raw mean coefficient on the new-concept questions.
    Magnitude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneVariant {
    pub kind: VariantKind,
    /// Mask ratio `k`; the top-ranked selection takes `k·n/8` vectors per
    /// maskable layer.
    pub ratio: f64,
    /// Seed for the random selection.
    pub seed: u64,
    pub ranking: SelectionRanking,
    pub positions: CoefficientPositions,
}

impl Default for FinetuneVariant {
    fn default() -> Self {
        Self {
            kind: VariantKind::Top,
            ratio: 0.5,
            seed: 0,
            ranking: SelectionRanking::default(),
            positions: CoefficientPositions::default(),
        }
    }
}

impl FinetuneVariant {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Vectors per maskable layer in the top-ranked and random selections.
    pub fn selected_per_layer(&self, d_mlp: usize) -> usize {
        mask_count(self.ratio / 8.0, d_mlp)
    }
}

/// Per-layer flags over the rows of each value matrix; `true` rows train.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradientMask {
    layers: Vec<Vec<bool>>,
}

impl GradientMask {
    pub fn new(layers: Vec<Vec<bool>>) -> Self {
        Self { layers }
    }

    pub fn none(config: &ModelConfig) -> Self {
        Self::new(vec![vec![false; config.d_mlp]; config.n_layers])
    }

    pub fn all(config: &ModelConfig) -> Self {
        Self::new(vec![vec![true; config.d_mlp]; config.n_layers])
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.layers[l]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn count(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self::new(
            self.layers
                .iter()
                .map(|l| l.iter().map(|&b| !b).collect())
                .collect(),
        )
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.n_layers || self.layers.iter().any(|l| l.len() != config.d_mlp) {
            return Err(Error::Config(format!(
                "gradient mask shape does not match {} layers of {} value vectors",
                config.n_layers, config.d_mlp
            )));
        }
        Ok(())
    }

    fn from_indices(config: &ModelConfig, layers: Vec<Vec<usize>>) -> Self {
        let mut mask = Self::none(config);
        for (l, idx) in layers.into_iter().enumerate() {
            for j in idx {
                mask.layers[l][j] = true;
            }
        }
        mask
    }
}

/// Builds the gradient mask of `variant`. The ranked selections use the
/// new-concept questions against `irrelevant`; the full and random
/// selections ignore both.
pub fn select_ft_columns(
    weights: &TransformerWeights,
    new_concept: &[ProbeQuestion],
    irrelevant: &[ProbeQuestion],
    variant: &FinetuneVariant,
) -> Result<GradientMask> {
    let cfg = &weights.config;
    let skip = cfg.skip_layers();
    let count = variant.selected_per_layer(cfg.d_mlp);
    let top = || -> Result<GradientMask> {
        let means = MeanCoefficients::collect(weights, new_concept, irrelevant, variant.positions)?;
        let rankings = match variant.ranking {
            SelectionRanking::Contrastive => means.rankings()?,
            SelectionRanking::Magnitude => means.magnitude_rankings(),
        };
        let layers = rankings
            .into_iter()
            .enumerate()
            .map(|(l, r)| if l < skip { Vec::new() } else { r[..count].to_vec() })
            .collect();
        Ok(GradientMask::from_indices(cfg, layers))
    };
    match variant.kind {
        VariantKind::Full => Ok(GradientMask::all(cfg)),
        VariantKind::Top => top(),
        VariantKind::Complement => Ok(top()?.complement()),
        VariantKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(variant.seed);
            let layers = (0..cfg.n_layers)
                .map(|l| {
                    if l < skip {
                        Vec::new()
                    } else {
                        sample(&mut rng, cfg.d_mlp, count).into_vec()
                    }
                })
                .collect();
            Ok(GradientMask::from_indices(cfg, layers))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_selection_size_follows_k_over_8() {
        let v = FinetuneVariant::default();
        assert_eq!(v.selected_per_layer(512), 32);
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("FT-PV".parse::<VariantKind>().unwrap(), VariantKind::Top);
        assert!(matches!("ft-xx".parse::<VariantKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn mask_shape_checked() {
        let cfg = ModelConfig::default();
        assert!(GradientMask::all(&cfg).check(&cfg).is_ok());
        let bad = GradientMask::new(vec![vec![true; 3]]);
        assert!(matches!(bad.check(&cfg), Err(Error::Config(_))));
    }
}
