use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic batch order over a sentence stream.
///
/// The stream is split after every `<eos>`. Each epoch shuffles the
/// sentences with a seed derived from `(seed, epoch)` and packs whole
/// sentences greedily into sequences of at most `seq_len + 1` tokens. The
/// batch for any step can be rebuilt from `(seed, step)` alone, which is
/// what makes resuming exact.
#[derive(Clone, Debug)]
pub struct Batcher {
    sentences: Vec<Vec<usize>>,
    seq_len: usize,
    batch_size: usize,
    seed: u64,
    epoch: Option<(usize, Vec<Vec<usize>>)>,
    /// Global index of the first packed sequence of each epoch.
    epoch_starts: Vec<usize>,
}

/// Inputs and next-token targets for one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Option<usize>>,
}

impl Batcher {
    pub fn new(stream: &[u32], eos: usize, seq_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if seq_len < 2 || batch_size == 0 {
            return Err(Error::Config("seq_len must be >= 2 and batch_size >= 1".into()));
        }
        let mut sentences = Vec::new();
        let mut cur = Vec::new();
        for &t in stream {
            cur.push(t as usize);
            if t as usize == eos {
                sentences.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            sentences.push(cur);
        }
        if sentences.is_empty() {
            return Err(Error::Config("empty training stream".into()));
        }
        if let Some(long) = sentences.iter().find(|s| s.len() > seq_len + 1) {
            return Err(Error::Config(format!(
                "sentence of {} tokens does not fit seq_len {seq_len}",
                long.len()
            )));
        }
        Ok(Self {
            sentences,
            seq_len,
            batch_size,
            seed,
            epoch: None,
            epoch_starts: vec![0],
        })
    }

    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    fn pack_epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.sentences.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut packed = Vec::new();
        let mut cur: Vec<usize> = Vec::new();
        for i in order {
            let s = &self.sentences[i];
            if cur.len() + s.len() > self.seq_len + 1 {
                packed.push(std::mem::take(&mut cur));
            }
            cur.extend_from_slice(s);
        }
        if !cur.is_empty() {
            packed.push(cur);
        }
        packed
    }

    /// Sequences per epoch for the epochs seen so far.
    pub fn sequences_in_epoch(&mut self, epoch: usize) -> usize {
        self.load_epoch(epoch);
        self.epoch.as_ref().map_or(0, |(_, p)| p.len())
    }

    fn load_epoch(&mut self, epoch: usize) {
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.epoch = Some((epoch, self.pack_epoch(epoch)));
        }
    }

    /// Global index of the first packed sequence of `epoch`.
    fn epoch_start(&mut self, epoch: usize) -> usize {
        while self.epoch_starts.len() <= epoch {
            let e = self.epoch_starts.len() - 1;
            let n = self.pack_epoch(e).len();
            let last = *self.epoch_starts.last().expect("non-empty");
            self.epoch_starts.push(last + n);
        }
        self.epoch_starts[epoch]
    }

    fn sequence(&mut self, global: usize) -> Vec<usize> {
        let mut epoch = 0;
        while self.epoch_start(epoch + 1) <= global {
            epoch += 1;
        }
        let local = global - self.epoch_start(epoch);
        self.load_epoch(epoch);
        self.epoch.as_ref().expect("loaded").1[local].clone()
    }

    /// Batch used at (0-based) optimization step `step`.
    pub fn batch(&mut self, step: usize) -> TrainBatch {
        let seqs: Vec<Vec<usize>> = (0..self.batch_size)
            .map(|i| self.sequence(step * self.batch_size + i))
            .collect();
        let width = seqs.iter().map(|s| s.len() - 1).max().unwrap_or(1).max(1);
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut targets = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            let n = s.len() - 1;
            let mut inp = s[..n.max(1)].to_vec();
            inp.resize(width, crate::model::PAD_ID);
            inputs.push(inp);
            for p in 0..width {
                targets.push(if p < n { Some(s[p + 1]) } else { None });
            }
        }
        TrainBatch { inputs, targets }
    }

    /// Optimization steps that cover one pass over the data (first epoch).
    pub fn steps_per_epoch(&mut self) -> usize {
        self.sequences_in_epoch(0).div_ceil(self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> Vec<u32> {
        // three sentences terminated by eos = 1
        vec![5, 6, 7, 1, 8, 9, 1, 10, 11, 12, 13, 1]
    }

    #[test]
    fn packs_whole_sentences() {
        let mut b = Batcher::new(&stream(), 1, 6, 1, 3).unwrap();
        let mut seen = Vec::new();
        for step in 0..b.sequences_in_epoch(0) {
            let batch = b.batch(step);
            let inp = &batch.inputs[0];
            let n = batch.targets.iter().filter(|t| t.is_some()).count();
            let mut full = inp[..n].to_vec();
            full.push(batch.targets[n - 1].unwrap());
            seen.extend(full);
        }
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        let mut expect = stream().iter().map(|&t| t as usize).collect::<Vec<_>>();
        expect.sort_unstable();
        assert_eq!(sorted, expect);
    }

    #[test]
    fn batches_are_reproducible() {
        let mut a = Batcher::new(&stream(), 1, 6, 2, 9).unwrap();
        let mut b = Batcher::new(&stream(), 1, 6, 2, 9).unwrap();
        let later = b.batch(5);
        for s in 0..5 {
            a.batch(s);
        }
        assert_eq!(a.batch(5), later);
    }

    #[test]
    fn rejects_overlong_sentence() {
        assert!(Batcher::new(&stream(), 1, 2, 1, 0).is_err());
    }
}
