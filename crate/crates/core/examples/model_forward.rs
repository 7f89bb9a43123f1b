//! Runs a freshly initialized model with and without a mask on its MLP
//! units, and prints the coefficient trace of the last layer.

use paramspec::model::{MaskSpec, ModelConfig, TransformerWeights};

fn main() -> paramspec::Result<()> {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_mlp: 64,
        n_heads: 4,
        vocab_size: 20,
        max_seq: 16,
        ..ModelConfig::default()
    };
    let w = TransformerWeights::init(&cfg, 1)?;
    println!("{} parameters, skip {} layer(s)", w.param_count(), cfg.skip_layers());

    let tokens = [3, 7, 1, 12, 5];
    let plain = w.forward(&tokens, None, true)?;
    let mask = MaskSpec::new(vec![vec![], (0..16).collect()], cfg.skip_layers(), cfg.d_mlp)?;
    let masked = w.forward(&tokens, Some(&mask), false)?;

    let last = tokens.len() - 1;
    let gap = plain
        .logits_at(0, last)
        .iter()
        .zip(masked.logits_at(0, last))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("masking {} units moves the last logits by at most {gap:.4}", mask.count());

    if let Some(trace) = &plain.trace {
        let m = &trace.layers[1];
        println!("layer 1 coefficients at position 0: {:?}", &m.row(0)[..8]);
    }
    Ok(())
}
