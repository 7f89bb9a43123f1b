//! Generates the default fact corpus and shows its tiers, a few training
//! sentences, and one multiple-choice probe.

use paramspec::corpus::{fact_sentences, generate_corpus, CorpusConfig, Tier};

fn main() -> paramspec::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        finetune_concepts: 2,
        ..CorpusConfig::default()
    })?;
    println!(
        "{} concepts, {} probes, {} stream tokens, vocabulary {}",
        corpus.concepts.len(),
        corpus.questions.len(),
        corpus.stream.len(),
        corpus.tokenizer.vocab_size()
    );
    for tier in Tier::ALL {
        println!("{tier}: {} concepts", corpus.concepts_in(tier).len());
    }

    let c = corpus.concept(0);
    println!("\nconcept {} ({}):", c.name, c.tier);
    for s in fact_sentences(c, 1).iter().take(4) {
        println!("  {s}");
    }

    let q = corpus.questions_for(0)[0];
    println!("\nprobe: {}", corpus.tokenizer.detokenize(&q.prompt)?);
    println!("answer: {}", corpus.tokenizer.detokenize(&q.answer)?);

    for id in corpus.finetune_concepts() {
        let withheld = corpus.concept(id).attributes.iter().filter(|a| a.withheld).count();
        println!("concept {id} keeps {withheld} facts out of pretraining");
    }
    Ok(())
}
