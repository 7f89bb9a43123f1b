use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::Capture;
use super::mask::MaskSpec;
use super::weights::TransformerWeights;
use crate::error::{Error, Result};
use crate::tensor::log_softmax;

/// Largest number of sequences scored in one batched forward pass.
const SCORE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Greedy,
    /// Softmax sampling at temperature `τ`; `τ == 0` is greedy.
    Temperature(f32),
}

#[derive(Clone, Debug)]
pub struct GenerateOptions<'m> {
    pub max_new: usize,
    pub sampler: Sampler,
    pub seed: u64,
    /// Generation halts after emitting this token (it is included).
    pub stop_token: Option<usize>,
    pub mask: Option<&'m MaskSpec>,
}

impl GenerateOptions<'_> {
    pub fn greedy(max_new: usize) -> Self {
        Self {
            max_new,
            sampler: Sampler::Greedy,
            seed: 0,
            stop_token: None,
            mask: None,
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl TransformerWeights {
    /// Autoregressive continuation of `prompt` (the prompt is not included
    /// in the result). Stops early at `stop_token` or when the context
    /// reaches `max_seq`.
    pub fn generate(&self, prompt: &[usize], opts: &GenerateOptions<'_>) -> Result<Vec<usize>> {
        if opts.max_new == 0 {
            return Err(Error::Usage("max_new must be at least 1".into()));
        }
        if prompt.is_empty() {
            return Err(Error::Input("empty prompt".into()));
        }
        if prompt.len() > self.config.max_seq {
            return Err(Error::Input(format!(
                "prompt length {} exceeds max_seq {}",
                prompt.len(),
                self.config.max_seq
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut context = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < opts.max_new && context.len() < self.config.max_seq {
            let fwd = self.forward_batch(&[context.clone()], opts.mask, &Capture::default())?;
            let row = fwd.logits_at(0, context.len() - 1);
            let next = match opts.sampler {
                Sampler::Greedy => argmax(row),
                Sampler::Temperature(tau) if tau <= 0.0 => argmax(row),
                Sampler::Temperature(tau) => {
                    let scaled: Vec<f32> = row.iter().map(|&v| v / tau).collect();
                    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
                    WeightedIndex::new(&probs)
                        .map_err(|e| Error::Usage(format!("sampling distribution: {e}")))?
                        .sample(&mut rng)
                }
            };
            out.push(next);
            context.push(next);
            if opts.stop_token == Some(next) {
                break;
            }
        }
        Ok(out)
    }

    /// Greedy continuation of several prompts at once. Equivalent to calling
    /// [`generate`](Self::generate) with [`Sampler::Greedy`] on each prompt.
    pub fn generate_greedy_batch(
        &self,
        prompts: &[Vec<usize>],
        max_new: usize,
        stop_token: Option<usize>,
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<Vec<usize>>> {
        if max_new == 0 {
            return Err(Error::Usage("max_new must be at least 1".into()));
        }
        let mut contexts = prompts.to_vec();
        let mut outs = vec![Vec::new(); prompts.len()];
        let mut active: Vec<usize> = Vec::new();
        for (i, p) in prompts.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Input("empty prompt".into()));
            }
            if p.len() > self.config.max_seq {
                return Err(Error::Input(format!(
                    "prompt length {} exceeds max_seq {}",
                    p.len(),
                    self.config.max_seq
                )));
            }
            if p.len() < self.config.max_seq {
                active.push(i);
            }
        }
        while !active.is_empty() {
            let mut next_active = Vec::with_capacity(active.len());
            for chunk in active.chunks(SCORE_CHUNK) {
                let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| contexts[i].clone()).collect();
                let fwd = self.forward_batch(&batch, mask, &Capture::default())?;
                for (b, &i) in chunk.iter().enumerate() {
                    let next = argmax(fwd.logits_at(b, contexts[i].len() - 1));
                    outs[i].push(next);
                    contexts[i].push(next);
                    let done = outs[i].len() >= max_new
                        || contexts[i].len() >= self.config.max_seq
                        || stop_token == Some(next);
                    if !done {
                        next_active.push(i);
                    }
                }
            }
            active = next_active;
        }
        Ok(outs)
    }

    /// Sum of token log-probabilities of `continuation` given `prompt`.
    pub fn sequence_loglik(&self, prompt: &[usize], continuation: &[usize], mask: Option<&MaskSpec>) -> Result<f64> {
        let pair = (prompt.to_vec(), continuation.to_vec());
        Ok(self.sequence_logliks(std::slice::from_ref(&pair), mask)?[0])
    }

    /// Batched [`sequence_loglik`](Self::sequence_loglik). Pairs sharing the
    /// same model input (prompt plus all but the last continuation token)
    /// share one forward row.
    pub fn sequence_logliks(&self, pairs: &[(Vec<usize>, Vec<usize>)], mask: Option<&MaskSpec>) -> Result<Vec<f64>> {
        let mut inputs: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut slot = Vec::with_capacity(pairs.len());
        for (prompt, cont) in pairs {
            if cont.is_empty() {
                return Err(Error::Usage("empty continuation".into()));
            }
            if prompt.is_empty() {
                return Err(Error::Usage("empty prompt".into()));
            }
            if prompt.len() + cont.len() > self.config.max_seq {
                return Err(Error::Input(format!(
                    "prompt+continuation length {} exceeds max_seq {}",
                    prompt.len() + cont.len(),
                    self.config.max_seq
                )));
            }
            let mut input = prompt.clone();
            input.extend_from_slice(&cont[..cont.len() - 1]);
            let id = *index.entry(input.clone()).or_insert_with(|| {
                inputs.push(input);
                inputs.len() - 1
            });
            slot.push(id);
        }

        // Per distinct input: log-softmax rows needed by any pair.
        let mut logps: Vec<Vec<Vec<f64>>> = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(SCORE_CHUNK) {
            let fwd = self.forward_batch(chunk, mask, &Capture::default())?;
            for (b, seq) in chunk.iter().enumerate() {
                logps.push((0..seq.len()).map(|p| log_softmax(fwd.logits_at(b, p))).collect());
            }
        }
        Ok(pairs
            .iter()
            .zip(slot)
            .map(|((prompt, cont), id)| {
                cont.iter()
                    .enumerate()
                    .map(|(i, &tok)| logps[id][prompt.len() - 1 + i][tok])
                    .sum()
            })
            .collect())
    }
}
