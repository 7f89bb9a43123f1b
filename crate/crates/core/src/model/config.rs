use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ActivationKind;

/// Shape of the MLP sublayer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpStyle {
    /// `f(x·W_K)·W_V`.
    TwoMatrix,
    /// `(act(x·W_K) ∘ (x·W_up))·W_V`; the gate and up projections together
    /// play the role of the key matrix.
    ThreeMatrixGated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub activation: ActivationKind,
    pub mlp_style: MlpStyle,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            d_model: 128,
            d_mlp: 512,
            n_heads: 4,
            vocab_size: 512,
            max_seq: 128,
            activation: ActivationKind::Gelu,
            mlp_style: MlpStyle::TwoMatrix,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_mlp", self.d_mlp),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_mlp < self.d_model {
            return Err(Error::Config(format!(
                "d_mlp {} smaller than d_model {}",
                self.d_mlp, self.d_model
            )));
        }
        Ok(())
    }

    /// Number of leading layers that are never masked: five of every 32
    /// layers, rounded, at least one; exactly five from 32 layers up.
    pub fn skip_layers(&self) -> usize {
        skip_layers_for(self.n_layers)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// [`ModelConfig::skip_layers`] for a depth of `n_layers`.
pub fn skip_layers_for(n_layers: usize) -> usize {
    if n_layers >= 32 {
        5
    } else {
        ((5.0 * n_layers as f64 / 32.0).round() as usize).max(1)
    }
}
