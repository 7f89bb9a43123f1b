//! Trains a small model on a small corpus (or loads `model.ckpt` given as
//! the first argument), then masks each concept's most specific value
//! vectors at several ratios and prints the resulting scores.

use paramspec::corpus::{generate_corpus, CorpusConfig};
use paramspec::finetune::{pretrain, TrainConfig};
use paramspec::harness::probe_sets;
use paramspec::model::{ModelConfig, TransformerWeights};
use paramspec::surgery::{pss_sweep, SurgeryContext, SurgeryOptions};

fn main() -> paramspec::Result<()> {
    env_logger::init();
    let corpus = generate_corpus(&CorpusConfig {
        n_concepts: 18,
        repetitions: [48, 24, 12],
        ..CorpusConfig::default()
    })?;
    let weights = match std::env::args().nth(1) {
        Some(path) => TransformerWeights::load(path)?,
        None => {
            let model = ModelConfig {
                n_layers: 3,
                d_model: 64,
                d_mlp: 256,
                n_heads: 4,
                vocab_size: corpus.tokenizer.vocab_size(),
                ..ModelConfig::default()
            };
            let train = TrainConfig {
                steps: 1000,
                lr: 1e-3,
                ..TrainConfig::default()
            };
            pretrain(&model, &corpus.stream, corpus.tokenizer.eos_id(), &train, &[], |_, _, _| Ok(()))?
        }
    };

    let sets = probe_sets(&corpus, &[0, 1, 2, 6, 12], 0)?;
    let ctx = SurgeryContext::new(SurgeryOptions::default(), &corpus.tokenizer)?;
    let ratios = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
    let sweep = pss_sweep(&weights, &sets, &ratios, &ctx)?;
    for r in &sweep.reports {
        println!(
            "concept {:2} k {:.2}: specific {:.2} general {:.2} base {:.2} pss {}",
            r.concept,
            r.ratio,
            r.specific_after,
            r.general_after,
            r.base,
            r.pss.map_or("-".into(), |p| format!("{p:.3}"))
        );
    }
    println!("aggregate {:.3}", sweep.aggregate);
    Ok(())
}
