use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MlpStyle, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One transformer block.
///
/// The MLP key matrix is stored `[d×n]` (`x·W_K`) and the value matrix
/// `[n×d]` (`m·W_V`), so value vector `j` is row `j` of `mlp_value`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub mlp_key: Tensor,
    /// Up projection of the gated MLP; absent for the two-matrix style.
    pub mlp_up: Option<Tensor>,
    pub mlp_value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub head: Tensor,
}

impl TransformerWeights {
    /// Gaussian initialization (std 0.02; residual output projections
    /// scaled by `1/sqrt(2L)`), deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n, v) = (config.d_model, config.d_mlp, config.vocab_size);
        let base = 0.02f32;
        let resid = base / (2.0 * config.n_layers as f32).sqrt();
        let mut gauss = |shape: &[usize], std: f32| {
            let normal = Normal::new(0.0f32, std).expect("positive std");
            let len = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..len).map(|_| normal.sample(&mut rng)).collect())
                .expect("shape matches")
        };
        let token_embedding = gauss(&[v, d], base);
        let position_embedding = gauss(&[config.max_seq, d], base);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let attn_q = gauss(&[d, d], base);
            let attn_k = gauss(&[d, d], base);
            let attn_v = gauss(&[d, d], base);
            let attn_o = gauss(&[d, d], resid);
            let mlp_key = gauss(&[d, n], base);
            let mlp_up = match config.mlp_style {
                MlpStyle::TwoMatrix => None,
                MlpStyle::ThreeMatrixGated => Some(gauss(&[d, n], base)),
            };
            let mlp_value = gauss(&[n, d], resid);
            layers.push(LayerWeights {
                ln1_gain: Tensor::filled(&[d], 1.0),
                ln1_bias: Tensor::zeros(&[d]),
                attn_q,
                attn_k,
                attn_v,
                attn_o,
                ln2_gain: Tensor::filled(&[d], 1.0),
                ln2_bias: Tensor::zeros(&[d]),
                mlp_key,
                mlp_up,
                mlp_value,
            });
        }
        let head = gauss(&[d, v], base);
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            final_gain: Tensor::filled(&[d], 1.0),
            final_bias: Tensor::zeros(&[d]),
            head,
        })
    }

    /// All learnable arrays with stable names, in serialization order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.named() {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("final.gain".into(), &self.final_gain));
        out.push(("final.bias".into(), &self.final_bias));
        out.push(("head".into(), &self.head));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in layer.named_mut() {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("final.gain".into(), &mut self.final_gain));
        out.push(("final.bias".into(), &mut self.final_bias));
        out.push(("head".into(), &mut self.head));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Value vector `j` of layer `layer` (length `d`).
    pub fn value_vector(&self, layer: usize, j: usize) -> &[f32] {
        self.layers[layer].mlp_value.row(j)
    }

    /// Relabels the MLP units of one layer: new unit `j` is old unit
    /// `perm[j]`. Key columns, up columns and value rows move together,
    /// which leaves the function computed by the model unchanged.
    pub fn permute_mlp_units(&mut self, layer: usize, perm: &[usize]) -> Result<()> {
        let n = self.config.d_mlp;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Usage("permutation must cover 0..d_mlp exactly once".into()));
        }
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::Usage(format!("no layer {layer}")))?;
        let permute_cols = |t: &mut Tensor| {
            let src = t.clone();
            for r in 0..src.shape()[0] {
                let (from, to) = (src.row(r), t.row_mut(r));
                for (j, &p) in perm.iter().enumerate() {
                    to[j] = from[p];
                }
            }
        };
        permute_cols(&mut l.mlp_key);
        if let Some(up) = l.mlp_up.as_mut() {
            permute_cols(up);
        }
        let src = l.mlp_value.clone();
        for (j, &p) in perm.iter().enumerate() {
            l.mlp_value.row_mut(j).copy_from_slice(src.row(p));
        }
        Ok(())
    }
}

impl LayerWeights {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("attn.q", &self.attn_q),
            ("attn.k", &self.attn_k),
            ("attn.v", &self.attn_v),
            ("attn.o", &self.attn_o),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("mlp.key", &self.mlp_key),
        ];
        if let Some(up) = &self.mlp_up {
            v.push(("mlp.up", up));
        }
        v.push(("mlp.value", &self.mlp_value));
        v
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![
            ("ln1.gain", &mut self.ln1_gain),
            ("ln1.bias", &mut self.ln1_bias),
            ("attn.q", &mut self.attn_q),
            ("attn.k", &mut self.attn_k),
            ("attn.v", &mut self.attn_v),
            ("attn.o", &mut self.attn_o),
            ("ln2.gain", &mut self.ln2_gain),
            ("ln2.bias", &mut self.ln2_bias),
            ("mlp.key", &mut self.mlp_key),
        ];
        if let Some(up) = self.mlp_up.as_mut() {
            v.push(("mlp.up", up));
        }
        v.push(("mlp.value", &mut self.mlp_value));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig {
            n_layers: 2,
            d_model: 16,
            d_mlp: 32,
            n_heads: 2,
            vocab_size: 20,
            max_seq: 8,
            ..ModelConfig::default()
        };
        let a = TransformerWeights::init(&c, 3).unwrap();
        let b = TransformerWeights::init(&c, 3).unwrap();
        let other = TransformerWeights::init(&c, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_eq!(a.layers[0].mlp_value.shape(), &[32, 16]);
        assert_eq!(a.value_vector(1, 5).len(), 16);
    }

    #[test]
    fn permutation_rejects_duplicates() {
        let c = ModelConfig {
            n_layers: 1,
            d_model: 4,
            d_mlp: 4,
            n_heads: 1,
            vocab_size: 5,
            max_seq: 4,
            ..ModelConfig::default()
        };
        let mut w = TransformerWeights::init(&c, 0).unwrap();
        assert!(w.permute_mlp_units(0, &[0, 0, 1, 2]).is_err());
        assert!(w.permute_mlp_units(0, &[3, 2, 1, 0]).is_ok());
    }
}
