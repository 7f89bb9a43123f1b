//! Forward pass with optional coefficient capture and coefficient masking.
//!
//! Each block computes `A = attn(LN1(X))`, then the MLP on `LN2(X + A)`:
//! coefficients `m = f(h·W_K)` (times `h·W_up` in the gated style) and
//! output `M = m·W_V`, so that `X' = X + A + M`. A [`MaskSpec`] zeroes
//! the selected entries of `m` before the value projection; capture always
//! records `m` as it was before masking.

use serde::{Deserialize, Serialize};

use super::mask::MaskSpec;
use super::weights::TransformerWeights;
use crate::autodiff::{AttentionShape, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Id used to right-pad ragged batches. Causal attention means padding
/// never influences real positions.
pub const PAD_ID: usize = 0;

/// Which token positions a coefficient trace keeps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionSelector {
    /// Every real (non-padding) position.
    All,
    /// Explicit positions per sequence of the batch.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, Default)]
pub struct Capture {
    pub coefficients: Option<PositionSelector>,
    /// Record `X`, `A` and `M` of every layer.
    pub layer_outputs: bool,
}

impl Capture {
    pub fn coefficients(selector: PositionSelector) -> Self {
        Self {
            coefficients: Some(selector),
            layer_outputs: false,
        }
    }
}

/// Post-nonlinearity MLP coefficients, one `[rows×n]` tensor per layer.
/// Row `r` belongs to `(sequence, position) = positions[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTrace {
    pub layers: Vec<Tensor>,
    pub positions: Vec<(usize, usize)>,
    pub selector: PositionSelector,
}

/// Residual-stream pieces of one block, each `[rows×d]`.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub input: Tensor,
    pub attention: Tensor,
    pub mlp: Tensor,
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[batch*seq × vocab]`.
    pub logits: Tensor,
    /// Residual stream after the last block, `[batch*seq × d]`.
    pub final_hidden: Tensor,
    pub trace: Option<CoefficientTrace>,
    pub layers: Option<Vec<LayerRecord>>,
    pub batch: usize,
    pub seq: usize,
    pub lengths: Vec<usize>,
}

impl ForwardOutput {
    pub fn logits_at(&self, sequence: usize, position: usize) -> &[f32] {
        self.logits.row(sequence * self.seq + position)
    }

    pub fn hidden_at(&self, sequence: usize, position: usize) -> &[f32] {
        self.final_hidden.row(sequence * self.seq + position)
    }
}

/// Right-padded token batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn new(sequences: &[Vec<usize>], vocab_size: usize, max_seq: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let seq = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if seq == 0 {
            return Err(Error::Input("empty token sequence".into()));
        }
        if seq > max_seq {
            return Err(Error::Input(format!("sequence length {seq} exceeds max_seq {max_seq}")));
        }
        let mut tokens = Vec::with_capacity(sequences.len() * seq);
        for s in sequences {
            if s.is_empty() {
                return Err(Error::Input("empty token sequence".into()));
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= vocab_size) {
                return Err(Error::Input(format!("token id {bad} >= vocab_size {vocab_size}")));
            }
            tokens.extend_from_slice(s);
            tokens.extend(std::iter::repeat_n(PAD_ID, seq - s.len()));
        }
        Ok(Self {
            tokens,
            batch: sequences.len(),
            seq,
            lengths: sequences.iter().map(Vec::len).collect(),
        })
    }
}

pub(crate) struct GraphForward {
    pub logits: Var,
    pub final_hidden: Var,
    /// Pre-mask coefficients per layer.
    pub coefficients: Vec<Var>,
    /// `(input, attention, mlp, output)` per layer.
    pub layer_vars: Vec<(Var, Var, Var, Var)>,
    /// Leaves in [`TransformerWeights::named_params`] order.
    pub params: Vec<Var>,
}

/// Records the forward pass on `g`. Weights become trainable leaves when
/// `trainable` is set, constants otherwise.
pub(crate) fn build_graph<'a>(
    g: &mut Graph<'a>,
    w: &'a TransformerWeights,
    batch: &Batch,
    mask: Option<&MaskSpec>,
    trainable: bool,
) -> Result<GraphForward> {
    let cfg = &w.config;
    if let Some(mask) = mask {
        if mask.n_layers() > cfg.n_layers {
            return Err(Error::Mask(format!(
                "mask has {} layers, model has {}",
                mask.n_layers(),
                cfg.n_layers
            )));
        }
        for l in 0..mask.n_layers() {
            if let Some(&bad) = mask.layer(l).iter().find(|&&j| j >= cfg.d_mlp) {
                return Err(Error::Mask(format!("layer {l}: index {bad} >= d_mlp {}", cfg.d_mlp)));
            }
        }
    }
    let params: Vec<Var> = w
        .named_params()
        .into_iter()
        .map(|(_, t)| if trainable { g.param_ref(t) } else { g.constant_ref(t) })
        .collect();
    let mut next = params.iter().copied();
    let mut take = || next.next().expect("parameter leaves in named order");

    let tok_emb = take();
    let pos_emb = take();
    let pos_ids: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
    let tok = g.embedding(tok_emb, &batch.tokens)?;
    let pos = g.embedding(pos_emb, &pos_ids)?;
    let mut x = g.add(tok, pos)?;

    let shape = AttentionShape {
        batch: batch.batch,
        seq: batch.seq,
        heads: cfg.n_heads,
    };
    let mut coefficients = Vec::with_capacity(cfg.n_layers);
    let mut layer_vars = Vec::with_capacity(cfg.n_layers);
    for (l, layer) in w.layers.iter().enumerate() {
        let (ln1_g, ln1_b) = (take(), take());
        let (wq, wk, wv, wo) = (take(), take(), take(), take());
        let (ln2_g, ln2_b) = (take(), take());
        let key = take();
        let up = layer.mlp_up.as_ref().map(|_| take());
        let value = take();

        let h = g.layer_norm(x, ln1_g, ln1_b)?;
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let ctx = g.causal_attention(q, k, v, shape)?;
        let attn = g.matmul(ctx, wo)?;
        let mid = g.add(x, attn)?;

        let h2 = g.layer_norm(mid, ln2_g, ln2_b)?;
        let pre = g.matmul(h2, key)?;
        let mut m = g.activation(pre, cfg.activation)?;
        if let Some(up) = up {
            let lin = g.matmul(h2, up)?;
            m = g.mul(m, lin)?;
        }
        coefficients.push(m);
        let masked = match mask.and_then(|mk| mk.keep_flags(l, cfg.d_mlp)) {
            Some(keep) => g.mask_columns(m, &keep)?,
            None => m,
        };
        let mlp_out = g.matmul_wide(masked, value)?;
        let out = g.add(mid, mlp_out)?;
        layer_vars.push((x, attn, mlp_out, out));
        x = out;
    }
    let (fg, fb, head) = (take(), take(), take());
    let hf = g.layer_norm(x, fg, fb)?;
    let logits = g.matmul(hf, head)?;
    Ok(GraphForward {
        logits,
        final_hidden: x,
        coefficients,
        layer_vars,
        params,
    })
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let c = t.last_dim();
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(vec![rows.len(), c], data).expect("row gather")
}

impl TransformerWeights {
    /// Forward pass over a single sequence. With `capture` set, the trace
    /// holds coefficients for every position.
    pub fn forward(&self, tokens: &[usize], mask: Option<&MaskSpec>, capture: bool) -> Result<ForwardOutput> {
        let capture = if capture {
            Capture::coefficients(PositionSelector::All)
        } else {
            Capture::default()
        };
        self.forward_batch(&[tokens.to_vec()], mask, &capture)
    }

    pub fn forward_batch(
        &self,
        sequences: &[Vec<usize>],
        mask: Option<&MaskSpec>,
        capture: &Capture,
    ) -> Result<ForwardOutput> {
        let batch = Batch::new(sequences, self.config.vocab_size, self.config.max_seq)?;
        let mut g = Graph::new();
        let fwd = build_graph(&mut g, self, &batch, mask, false)?;

        let trace = match &capture.coefficients {
            None => None,
            Some(selector) => {
                let positions: Vec<(usize, usize)> = match selector {
                    PositionSelector::All => (0..batch.batch)
                        .flat_map(|b| (0..batch.lengths[b]).map(move |p| (b, p)))
                        .collect(),
                    PositionSelector::Explicit(per_seq) => {
                        if per_seq.len() != batch.batch {
                            return Err(Error::Usage(format!(
                                "{} position lists for {} sequences",
                                per_seq.len(),
                                batch.batch
                            )));
                        }
                        let mut out = Vec::new();
                        for (b, ps) in per_seq.iter().enumerate() {
                            for &p in ps {
                                if p >= batch.lengths[b] {
                                    return Err(Error::Usage(format!(
                                        "position {p} outside sequence {b} of length {}",
                                        batch.lengths[b]
                                    )));
                                }
                                out.push((b, p));
                            }
                        }
                        out
                    }
                };
                let rows: Vec<usize> = positions.iter().map(|&(b, p)| b * batch.seq + p).collect();
                let layers = fwd
                    .coefficients
                    .iter()
                    .map(|&v| gather_rows(g.value(v), &rows))
                    .collect();
                Some(CoefficientTrace {
                    layers,
                    positions,
                    selector: selector.clone(),
                })
            }
        };
        let layers = capture.layer_outputs.then(|| {
            fwd.layer_vars
                .iter()
                .map(|&(i, a, m, o)| LayerRecord {
                    input: g.value(i).clone(),
                    attention: g.value(a).clone(),
                    mlp: g.value(m).clone(),
                    output: g.value(o).clone(),
                })
                .collect()
        });
        Ok(ForwardOutput {
            logits: g.value(fwd.logits).clone(),
            final_hidden: g.value(fwd.final_hidden).clone(),
            trace,
            layers,
            batch: batch.batch,
            seq: batch.seq,
            lengths: batch.lengths,
        })
    }

    /// Mean next-token cross entropy over `sequences` and its gradient with
    /// respect to every parameter, in [`named_params`](Self::named_params)
    /// order. Parameters the loss does not reach get zero gradients.
    pub fn loss_and_gradients(&self, sequences: &[Vec<usize>], mask: Option<&MaskSpec>) -> Result<(f64, Vec<Tensor>)> {
        let batch = Batch::new(sequences, self.config.vocab_size, self.config.max_seq)?;
        let targets: Vec<Option<usize>> = sequences
            .iter()
            .flat_map(|s| (0..batch.seq).map(move |t| s.get(t + 1).copied().filter(|_| t + 1 < s.len())))
            .collect();
        let mut g = Graph::new();
        let fwd = build_graph(&mut g, self, &batch, mask, true)?;
        let loss = g.cross_entropy(fwd.logits, &targets)?;
        let value = f64::from(g.value(loss).item()?);
        g.backward(loss)?;
        let grads = fwd
            .params
            .iter()
            .zip(self.named_params())
            .map(|(&p, (_, t))| g.take_grad(p).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, grads))
    }
}
