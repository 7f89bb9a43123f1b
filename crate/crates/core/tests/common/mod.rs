//! Independent `f64` reference implementation of the toy transformer, used as
//! an oracle for gradients, masking and permutation tests.

#![allow(dead_code)]

use paramspec::model::{MlpStyle, ModelConfig, TransformerWeights};
use paramspec::ActivationKind;

/// `erf` from its everywhere-convergent series
/// `2/√π · e^{−x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1))`.
pub fn erf(x: f64) -> f64 {
    if x.abs() > 6.0 {
        return x.signum();
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

pub fn act(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::Gelu => 0.5 * x * (1.0 + erf(x / 2f64.sqrt())),
        ActivationKind::Silu => x / (1.0 + (-x).exp()),
    }
}

#[derive(Clone, Debug)]
pub struct RefModel {
    pub cfg: ModelConfig,
    /// Parameters in `named_params` order, widened to `f64`.
    pub params: Vec<Vec<f64>>,
}

type Mat = Vec<Vec<f64>>;

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let r = 1.0 / (var + 1e-5).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * r * g + b).collect()
}

/// `x[1×r] · w[r×c]` with `w` row-major.
fn vecmat(x: &[f64], w: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..c {
            out[j] += xi * w[i * c + j];
        }
    }
    out
}

impl RefModel {
    pub fn from_weights(w: &TransformerWeights) -> Self {
        let params = w
            .named_params()
            .into_iter()
            .map(|(_, t)| t.data().iter().map(|&v| f64::from(v)).collect())
            .collect();
        Self {
            cfg: w.config.clone(),
            params,
        }
    }

    fn per_layer(&self) -> usize {
        match self.cfg.mlp_style {
            MlpStyle::TwoMatrix => 10,
            MlpStyle::ThreeMatrixGated => 11,
        }
    }

    /// Residual stream of each position after every block, plus the MLP
    /// outputs and pre-mask coefficients per layer. `mask[l]` lists units of
    /// layer `l` whose contribution is removed.
    pub fn run(&self, tokens: &[usize], mask: &[Vec<usize>]) -> RefTrace {
        let c = &self.cfg;
        let (d, n, heads) = (c.d_model, c.d_mlp, c.n_heads);
        let dh = d / heads;
        let p = &self.params;
        let mut x: Mat = tokens
            .iter()
            .enumerate()
            .map(|(t, &id)| (0..d).map(|i| p[0][id * d + i] + p[1][t * d + i]).collect())
            .collect();
        let mut mlp_outs = Vec::new();
        let mut coefs = Vec::new();
        for l in 0..c.n_layers {
            let base = 2 + l * self.per_layer();
            let (g1, b1, wq, wk, wv, wo, g2, b2, key) = (
                &p[base],
                &p[base + 1],
                &p[base + 2],
                &p[base + 3],
                &p[base + 4],
                &p[base + 5],
                &p[base + 6],
                &p[base + 7],
                &p[base + 8],
            );
            let (up, value) = match c.mlp_style {
                MlpStyle::TwoMatrix => (None, &p[base + 9]),
                MlpStyle::ThreeMatrixGated => (Some(&p[base + 9]), &p[base + 10]),
            };
            let h: Mat = x.iter().map(|r| layer_norm(r, g1, b1)).collect();
            let q: Mat = h.iter().map(|r| vecmat(r, wq, d)).collect();
            let k: Mat = h.iter().map(|r| vecmat(r, wk, d)).collect();
            let v: Mat = h.iter().map(|r| vecmat(r, wv, d)).collect();
            let mut ctx = vec![vec![0.0; d]; tokens.len()];
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                for i in 0..tokens.len() {
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            cols.clone().map(|a| q[i][a] * k[j][a]).sum::<f64>() / (dh as f64).sqrt()
                        })
                        .collect();
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (j, ej) in e.iter().enumerate() {
                        for a in cols.clone() {
                            ctx[i][a] += ej / z * v[j][a];
                        }
                    }
                }
            }
            let mut layer_m = Vec::new();
            let mut layer_out = Vec::new();
            for (t, row) in x.iter_mut().enumerate() {
                let attn = vecmat(&ctx[t], wo, d);
                let mid: Vec<f64> = row.iter().zip(&attn).map(|(a, b)| a + b).collect();
                let h2 = layer_norm(&mid, g2, b2);
                let pre = vecmat(&h2, key, n);
                let mut m: Vec<f64> = pre.iter().map(|&z| act(c.activation, z)).collect();
                if let Some(up) = up {
                    let lin = vecmat(&h2, up, n);
                    m.iter_mut().zip(&lin).for_each(|(a, b)| *a *= b);
                }
                let mut out = vecmat(&m, value, d);
                for &j in mask.get(l).map_or(&[][..], Vec::as_slice) {
                    for i in 0..d {
                        out[i] -= m[j] * value[j * d + i];
                    }
                }
                *row = mid.iter().zip(&out).map(|(a, b)| a + b).collect();
                layer_m.push(m);
                layer_out.push(out);
            }
            coefs.push(layer_m);
            mlp_outs.push(layer_out);
        }
        let np = p.len();
        let logits = x
            .iter()
            .map(|r| vecmat(&layer_norm(r, &p[np - 3], &p[np - 2]), &p[np - 1], c.vocab_size))
            .collect();
        RefTrace {
            logits,
            final_hidden: x,
            mlp_outs,
            coefs,
        }
    }

    /// Mean next-token cross entropy over all sequences.
    pub fn loss(&self, sequences: &[Vec<usize>], mask: &[Vec<usize>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in sequences {
            let tr = self.run(s, mask);
            for t in 0..s.len().saturating_sub(1) {
                let row = &tr.logits[t];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                total += lse - row[s[t + 1]];
                count += 1;
            }
        }
        total / count as f64
    }
}

pub struct RefTrace {
    /// `[position][vocab]`.
    pub logits: Mat,
    pub final_hidden: Mat,
    /// `[layer][position][d]`, after masking.
    pub mlp_outs: Vec<Mat>,
    /// `[layer][position][n]`, before masking.
    pub coefs: Vec<Mat>,
}

/// Small model with weights scaled up so every parameter carries a
/// gradient well above `f32` noise.
pub fn small_model(style: MlpStyle, activation: ActivationKind, seed: u64) -> TransformerWeights {
    use rand::{Rng, SeedableRng};
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_mlp: 64,
        n_heads: 4,
        vocab_size: 16,
        max_seq: 8,
        activation,
        mlp_style: style,
    };
    let mut w = TransformerWeights::init(&cfg, seed).expect("valid config");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in w.named_params_mut() {
        let vector = t.shape().len() == 1;
        for v in t.data_mut() {
            if vector {
                *v += rng.random_range(-0.3f32..0.3);
            } else {
                *v *= 10.0;
            }
        }
    }
    w
}
