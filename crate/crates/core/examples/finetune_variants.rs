//! Selects value vectors with each fine-tuning variant on a small untrained
//! model, fine-tunes only those rows, and counts which rows moved.

use paramspec::corpus::{generate_corpus, CorpusConfig};
use paramspec::finetune::{finetune, select_ft_columns, FinetuneVariant, TrainConfig, VariantKind};
use paramspec::model::{ModelConfig, TransformerWeights};

fn main() -> paramspec::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        finetune_concepts: 2,
        ..CorpusConfig::default()
    })?;
    let cfg = ModelConfig {
        n_layers: 3,
        d_model: 32,
        d_mlp: 64,
        n_heads: 2,
        vocab_size: corpus.tokenizer.vocab_size(),
        max_seq: 64,
        ..ModelConfig::default()
    };
    let base = TransformerWeights::init(&cfg, 3)?;
    let targets = corpus.finetune_concepts();
    let new_qs: Vec<_> = targets.iter().flat_map(|&c| corpus.questions_for(c)).cloned().collect();
    let irrelevant: Vec<_> = corpus.questions_for(29).into_iter().cloned().collect();
    let stream = corpus.fact_stream(&targets, 2, 0)?;
    let train = TrainConfig {
        steps: 5,
        seq_len: 32,
        batch_size: 4,
        lr: 1e-2,
        ..TrainConfig::finetune_defaults()
    };

    for kind in VariantKind::ALL {
        let variant = FinetuneVariant::new(kind);
        let mask = select_ft_columns(&base, &new_qs, &irrelevant, &variant)?;
        let tuned = finetune(&base, &stream, corpus.tokenizer.eos_id(), &mask, &train)?;
        let selected: Vec<usize> = (0..cfg.n_layers).map(|l| mask.count(l)).collect();
        let moved: usize = (0..cfg.n_layers)
            .map(|l| {
                (0..cfg.d_mlp)
                    .filter(|&j| tuned.value_vector(l, j) != base.value_vector(l, j))
                    .count()
            })
            .sum();
        println!("{kind}: selected per layer {selected:?}, rows moved {moved}");
    }
    Ok(())
}
