use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Batcher;
use super::variants::GradientMask;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::checkpoint::{fill_params, read_records, write_records};
use crate::model::{build_graph, Batch, ModelConfig, TransformerWeights};
use crate::tensor::Tensor;

pub const STATE_MAGIC: &[u8; 8] = b"PSPECOPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    /// Fraction of `steps` spent in linear warmup.
    pub warmup_frac: f64,
    /// Cosine decay after warmup ends at `lr * min_lr_frac`.
    pub min_lr_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            seq_len: 64,
            lr: 3e-4,
            warmup_frac: 0.05,
            min_lr_frac: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn finetune_defaults() -> Self {
        Self {
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = (self.warmup_frac * self.steps as f64).round() as usize;
        if step < warmup {
            return self.lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (self.steps - warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_frac + (1.0 - self.min_lr_frac) * cosine)
    }
}

/// Which parameters the optimizer may change.
#[derive(Clone, Debug, PartialEq)]
pub enum Trainable {
    All,
    /// Only the selected value vectors (rows of each layer's value matrix).
    ValueVectors(GradientMask),
}

/// Optimizer state: step counter plus first and second moments.
/// The data order is a pure function of `(seed, step)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    step: usize,
    model: ModelConfig,
}

impl TrainState {
    pub fn new(weights: &TransformerWeights) -> Self {
        let zeros: Vec<Tensor> = weights.named_params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn to_bytes(&self, weights: &TransformerWeights) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&StateHeader {
            step: self.step,
            model: weights.config.clone(),
        })?;
        let names = weights.named_params();
        let mut records: Vec<(String, &Tensor)> = Vec::new();
        for ((name, _), (m, v)) in names.iter().zip(self.first_moment.iter().zip(&self.second_moment)) {
            records.push((format!("m.{name}"), m));
            records.push((format!("v.{name}"), v));
        }
        Ok(write_records(STATE_MAGIC, &header, &records))
    }

    pub fn from_bytes(buf: &[u8], weights: &TransformerWeights) -> Result<Self> {
        let (header, records) = read_records(STATE_MAGIC, buf)?;
        let header: StateHeader = serde_json::from_slice(&header)?;
        if header.model != weights.config {
            return Err(Error::Format("optimizer state belongs to a different model".into()));
        }
        let mut first = weights.clone();
        let mut second = weights.clone();
        let (mut m_recs, mut v_recs) = (Vec::new(), Vec::new());
        for (name, t) in records {
            if let Some(rest) = name.strip_prefix("m.") {
                m_recs.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("v.") {
                v_recs.push((rest.to_string(), t));
            } else {
                return Err(Error::Format(format!("unexpected record {name}")));
            }
        }
        fill_params(&mut first, m_recs)?;
        fill_params(&mut second, v_recs)?;
        let collect = |w: &TransformerWeights| w.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        Ok(Self {
            step: header.step,
            first_moment: collect(&first),
            second_moment: collect(&second),
        })
    }
}

/// Next-token training with a decoupled-weight-decay adaptive optimizer.
pub struct Trainer {
    pub weights: TransformerWeights,
    pub state: TrainState,
    pub config: TrainConfig,
    trainable: Trainable,
    batcher: Batcher,
    /// Per parameter: weight decay applies (matrices other than embeddings).
    decays: Vec<bool>,
    /// Per parameter: `Some(layer)` for value matrices.
    value_layer: Vec<Option<usize>>,
}

impl Trainer {
    pub fn new(weights: TransformerWeights, stream: &[u32], eos: usize, config: TrainConfig, trainable: Trainable) -> Result<Self> {
        config.validate()?;
        let seq_len = config.seq_len.min(weights.config.max_seq);
        let batcher = Batcher::new(stream, eos, seq_len, config.batch_size, config.seed)?;
        if let Trainable::ValueVectors(mask) = &trainable {
            mask.check(&weights.config)?;
        }
        let names = weights.named_params();
        let decays = names
            .iter()
            .map(|(n, t)| t.shape().len() == 2 && !n.contains("embedding"))
            .collect();
        let value_layer = names
            .iter()
            .map(|(n, _)| {
                n.strip_suffix(".mlp.value")
                    .and_then(|p| p.strip_prefix("layers."))
                    .and_then(|l| l.parse().ok())
            })
            .collect();
        let state = TrainState::new(&weights);
        Ok(Self {
            weights,
            state,
            config,
            trainable,
            batcher,
            decays,
            value_layer,
        })
    }

    pub fn with_state(mut self, state: TrainState) -> Self {
        self.state = state;
        self
    }

    pub fn steps_per_epoch(&mut self) -> usize {
        self.batcher.steps_per_epoch()
    }

    /// Mean cross entropy of the current weights on the batch of `step`,
    /// without updating anything.
    pub fn eval_loss(&mut self, step: usize) -> Result<f64> {
        let batch = self.batcher.batch(step);
        let packed = Batch::new(&batch.inputs, self.weights.config.vocab_size, self.weights.config.max_seq)?;
        let mut g = Graph::new();
        let fwd = build_graph(&mut g, &self.weights, &packed, None, false)?;
        let loss = g.cross_entropy(fwd.logits, &batch.targets)?;
        Ok(f64::from(g.value(loss).item()?))
    }

    /// One optimization step; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.state.step;
        let batch = self.batcher.batch(step);
        let cfg = &self.weights.config;
        let packed = Batch::new(&batch.inputs, cfg.vocab_size, cfg.max_seq)?;

        let (loss, grads) = {
            let mut g = Graph::new();
            let fwd = build_graph(&mut g, &self.weights, &packed, None, true)?;
            let loss = g.cross_entropy(fwd.logits, &batch.targets)?;
            let value = f64::from(g.value(loss).item()?);
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            g.backward(loss)?;
            let grads: Vec<Option<Tensor>> = fwd.params.iter().map(|&p| g.take_grad(p)).collect();
            (value, grads)
        };

        let lr = self.config.lr_at(step);
        let t = (step + 1) as f64;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let (eps, wd) = (self.config.eps, self.config.weight_decay);

        let params = self.weights.named_params_mut();
        for (i, ((_, param), grad)) in params.into_iter().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            let rows: Option<&[bool]> = match (&self.trainable, self.value_layer[i]) {
                (Trainable::All, _) => None,
                (Trainable::ValueVectors(mask), Some(l)) => Some(mask.layer(l)),
                (Trainable::ValueVectors(_), None) => continue,
            };
            let width = param.last_dim();
            let decay = if self.decays[i] { wd } else { 0.0 };
            let m = self.state.first_moment[i].data_mut();
            let v = self.state.second_moment[i].data_mut();
            let p = param.data_mut();
            for k in 0..p.len() {
                if let Some(rows) = rows {
                    if !rows[k / width] {
                        continue;
                    }
                }
                let gk = f64::from(grad.data()[k]);
                let mk = b1 * f64::from(m[k]) + (1.0 - b1) * gk;
                let vk = b2 * f64::from(v[k]) + (1.0 - b2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = (mk / bc1) / ((vk / bc2).sqrt() + eps) + decay * f64::from(p[k]);
                p[k] = (f64::from(p[k]) - lr * update) as f32;
            }
            if !param.all_finite() {
                return Err(Error::Diverged { step, loss });
            }
        }
        self.state.step += 1;
        Ok(loss)
    }

    /// Steps until `state.step == until`, invoking `on_step` after each
    /// update with the completed step count and the batch loss.
    pub fn run_until(
        &mut self,
        until: usize,
        mut on_step: impl FnMut(usize, f64, &TransformerWeights, &TrainState) -> Result<()>,
    ) -> Result<()> {
        while self.state.step < until {
            let loss = self.step()?;
            on_step(self.state.step, loss, &self.weights, &self.state)?;
        }
        Ok(())
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.state.to_bytes(&self.weights)?).map_err(|e| Error::io(path, e))
    }
}

/// Trains a fresh model on `stream`, calling `on_checkpoint` whenever the
/// completed step count is in `checkpoints`.
pub fn pretrain(
    model: &ModelConfig,
    stream: &[u32],
    eos: usize,
    config: &TrainConfig,
    checkpoints: &[usize],
    mut on_checkpoint: impl FnMut(usize, &TransformerWeights, &TrainState) -> Result<()>,
) -> Result<TransformerWeights> {
    config.validate()?;
    if let Some(bad) = checkpoints.iter().find(|&&c| c == 0 || c > config.steps) {
        return Err(Error::Config(format!(
            "checkpoint step {bad} outside [1, {}]",
            config.steps
        )));
    }
    let weights = TransformerWeights::init(model, config.seed)?;
    let mut trainer = Trainer::new(weights, stream, eos, config.clone(), Trainable::All)?;
    trainer.run_until(config.steps, |step, loss, w, state| {
        log::debug!("step {step} loss {loss:.4}");
        if checkpoints.contains(&step) {
            on_checkpoint(step, w, state)?;
        }
        Ok(())
    })?;
    Ok(trainer.weights)
}

/// Trains only the value vectors selected by `mask`; everything else stays
/// bit-identical.
pub fn finetune(
    weights: &TransformerWeights,
    stream: &[u32],
    eos: usize,
    mask: &GradientMask,
    config: &TrainConfig,
) -> Result<TransformerWeights> {
    let mut trainer = Trainer::new(
        weights.clone(),
        stream,
        eos,
        config.clone(),
        Trainable::ValueVectors(mask.clone()),
    )?;
    trainer.run_until(config.steps, |_, _, _, _| Ok(()))?;
    Ok(trainer.weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = TrainConfig {
            steps: 100,
            lr: 1.0,
            ..TrainConfig::default()
        };
        assert!((c.lr_at(0) - 0.2).abs() < 1e-12);
        assert!((c.lr_at(4) - 1.0).abs() < 1e-12);
        assert!(c.lr_at(50) < 1.0 && c.lr_at(50) > 0.1);
        assert!((c.lr_at(100) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn zero_steps_rejected() {
        let c = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
