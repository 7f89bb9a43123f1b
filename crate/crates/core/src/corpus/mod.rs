//! Seeded synthetic fact corpus with frequency tiers.
//!
//! Concepts carry one value per relation (emblem, totem, charm, ...), all
//! drawn from one shared word pool. Concepts come in groups: the names of a
//! group reorder the same three syllables and their values permute one
//! shared value set, so only the word order of a name tells group mates
//! apart. Each fact is rendered into the training stream a tier-dependent
//! number of times, cycling through paraphrase templates. Every fact also
//! yields a four-option multiple-choice probe whose distractors are the
//! group mates' answers to the same relation.
//!
//! A few high-tier concepts can have some of their facts withheld from the
//! stream. Those facts are the new knowledge taught by fine-tuning.

mod io;
mod probes;
pub mod relations;
mod tokenizer;

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use probes::{build_probe_set, ConceptProbeSet, ProbeKind, ProbeQuestion, IRRELEVANT_CONCEPTS};
pub use tokenizer::{Tokenizer, EOS, PAD, SPECIALS};

use crate::error::{Error, Result};
use relations::{
    render, MCQ_FORMAT_WORDS, ORDERINGS, PROBE_TEMPLATE, RELATIONS, SYLLABLES, TEMPLATES, VALUES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Medium, Tier::Low];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    /// Index into [`RELATIONS`].
    pub relation: usize,
    pub value: String,
    pub distractors: [String; 3],
    /// Kept out of the pretraining stream.
    #[serde(default)]
    pub withheld: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub name: String,
    pub tier: Tier,
    pub attributes: Vec<Attribute>,
}

impl Concept {
    pub fn has_withheld(&self) -> bool {
        self.attributes.iter().any(|a| a.withheld)
    }

    /// The concept restricted to the facts seen in pretraining.
    pub fn known(&self) -> Concept {
        Concept {
            attributes: self.attributes.iter().filter(|a| !a.withheld).cloned().collect(),
            ..self.clone()
        }
    }

    /// True when the two concepts share no attribute value.
    pub fn disjoint_from(&self, other: &Concept) -> bool {
        let mine: HashSet<&str> = self.attributes.iter().map(|a| a.value.as_str()).collect();
        other.attributes.iter().all(|a| !mine.contains(a.value.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_concepts: usize,
    /// Fractions of concepts in the (high, medium, low) tiers.
    pub tier_ratios: [f64; 3],
    /// Occurrences of every fact in the stream for (high, medium, low).
    pub repetitions: [usize; 3],
    pub attributes_per_concept: usize,
    /// Concepts whose names reorder the same syllables and whose values
    /// permute the same value set.
    pub group_size: usize,
    /// High-tier concepts, drawn at random, that have facts withheld.
    pub finetune_concepts: usize,
    /// Facts withheld from each of those concepts (its last attributes).
    pub withheld_facts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_concepts: 30,
            tier_ratios: [1.0 / 3.0; 3],
            repetitions: [64, 24, 12],
            attributes_per_concept: 10,
            group_size: 5,
            finetune_concepts: 0,
            withheld_facts: 3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_concepts < 18 {
            return Err(Error::Config(format!("n_concepts {} < 18", self.n_concepts)));
        }
        let sum: f64 = self.tier_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.tier_ratios.iter().any(|&r| r < 0.0) {
            return Err(Error::Config(format!("tier ratios {:?} do not sum to 1", self.tier_ratios)));
        }
        let [h, m, l] = self.repetitions;
        if !(h > m && m > l && l >= 1) {
            return Err(Error::Config(format!(
                "repetitions must satisfy high > medium > low >= 1, got {:?}",
                self.repetitions
            )));
        }
        if self.attributes_per_concept < 4 || self.attributes_per_concept > RELATIONS.len() {
            return Err(Error::Config(format!(
                "attributes_per_concept must be in 4..={}",
                RELATIONS.len()
            )));
        }
        if self.group_size == 0 || self.group_size > ORDERINGS.len() || self.group_size > self.attributes_per_concept {
            return Err(Error::Config(format!(
                "group_size must be in 1..={}",
                ORDERINGS.len().min(self.attributes_per_concept)
            )));
        }
        if self.finetune_concepts > self.tier_counts()[0] {
            return Err(Error::Config(format!(
                "finetune_concepts {} exceeds the {} high-tier concepts",
                self.finetune_concepts,
                self.tier_counts()[0]
            )));
        }
        if self.finetune_concepts > 0 && !(1..self.attributes_per_concept).contains(&self.withheld_facts) {
            return Err(Error::Config(format!(
                "withheld_facts must be in 1..{}",
                self.attributes_per_concept
            )));
        }
        Ok(())
    }

    /// Concepts per tier by largest remainder.
    pub fn tier_counts(&self) -> [usize; 3] {
        let exact: Vec<f64> = self.tier_ratios.iter().map(|r| r * self.n_concepts as f64).collect();
        let mut counts: [usize; 3] = [0; 3];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        let mut left = self.n_concepts - counts.iter().sum::<usize>();
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub tokenizer: Tokenizer,
    pub concepts: Vec<Concept>,
    /// One multiple-choice probe per (concept, attribute), grouped by concept.
    pub questions: Vec<ProbeQuestion>,
    /// Training token stream; every rendered sentence is followed by `<eos>`.
    pub stream: Vec<u32>,
}

fn vocabulary() -> Tokenizer {
    let mut words: Vec<String> = Vec::new();
    for t in TEMPLATES.iter().chain(std::iter::once(&PROBE_TEMPLATE)) {
        words.extend(
            t.split(' ')
                .filter(|w| !w.starts_with('{'))
                .map(str::to_string),
        );
    }
    words.extend(RELATIONS.iter().map(|r| r.noun.to_string()));
    words.extend(VALUES.iter().map(|v| v.to_string()));
    words.extend(MCQ_FORMAT_WORDS.iter().map(|w| w.to_string()));
    words.extend(SYLLABLES.iter().map(|w| w.to_string()));
    Tokenizer::from_words(words)
}

/// Generates the corpus. Identical configs give identical corpora.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.n_concepts;

    let counts = config.tier_counts();
    let n_attr = config.attributes_per_concept;
    let mut concepts = Vec::with_capacity(total);
    let mut used_syllables = HashSet::new();
    let mut deck: Vec<&str> = Vec::new();
    while concepts.len() < total {
        let members = config.group_size.min(total - concepts.len());
        let syllables: Vec<&str> = loop {
            let mut picked: Vec<&str> = SYLLABLES.choose_multiple(&mut rng, 3).copied().collect();
            let mut key = picked.clone();
            key.sort_unstable();
            if used_syllables.insert(key) {
                picked.shuffle(&mut rng);
                break picked;
            }
        };
        let mut rels: Vec<usize> = (0..RELATIONS.len()).collect();
        rels.shuffle(&mut rng);
        rels.truncate(n_attr);
        rels.sort_unstable();
        // Groups take fresh values from a shuffled deck while it lasts.
        if deck.len() < n_attr {
            deck = VALUES.to_vec();
            deck.shuffle(&mut rng);
        }
        let set: Vec<&str> = deck.split_off(deck.len() - n_attr);
        for (i, order) in ORDERINGS.iter().take(members).enumerate() {
            let id = concepts.len();
            let tier = if id < counts[0] {
                Tier::High
            } else if id < counts[0] + counts[1] {
                Tier::Medium
            } else {
                Tier::Low
            };
            let name = order.iter().map(|&k| syllables[k]).collect::<Vec<_>>().join(" ");
            let attributes = rels
                .iter()
                .enumerate()
                .map(|(r, &relation)| {
                    let value = set[(i + r) % n_attr];
                    // Group mates' answers to the same relation come first.
                    let mut mates: Vec<&str> = (0..members).filter(|&j| j != i).map(|j| set[(j + r) % n_attr]).collect();
                    mates.shuffle(&mut rng);
                    let mut rest: Vec<&str> = set.iter().copied().filter(|v| *v != value && !mates.contains(v)).collect();
                    rest.shuffle(&mut rng);
                    let picked: Vec<String> = mates.into_iter().chain(rest).take(3).map(str::to_string).collect();
                    Attribute {
                        relation,
                        value: value.to_string(),
                        distractors: [picked[0].clone(), picked[1].clone(), picked[2].clone()],
                        withheld: false,
                    }
                })
                .collect();
            concepts.push(Concept {
                id,
                name,
                tier,
                attributes,
            });
        }
    }

    let high: Vec<usize> = (0..counts[0]).collect();
    for &id in high.choose_multiple(&mut rng, config.finetune_concepts) {
        let attrs = &mut concepts[id].attributes;
        let n = attrs.len();
        for a in &mut attrs[n - config.withheld_facts..] {
            a.withheld = true;
        }
    }

    let tokenizer = vocabulary();

    let mut sentences = Vec::new();
    for c in &concepts {
        sentences.extend(fact_sentences(&c.known(), config.repetitions[c.tier.index()]));
    }
    sentences.shuffle(&mut rng);
    let stream = encode_sentences(&tokenizer, &sentences)?;

    let mut questions = Vec::with_capacity(total * config.attributes_per_concept);
    for c in &concepts {
        for a in &c.attributes {
            questions.push(ProbeQuestion::multiple_choice(&tokenizer, c, a, &mut rng)?);
        }
    }

    Ok(Corpus {
        config: config.clone(),
        tokenizer,
        concepts,
        questions,
        stream,
    })
}

/// `reps` renderings of each fact of `concept`, cycling through templates
/// starting with the question/answer form.
pub fn fact_sentences(concept: &Concept, reps: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(concept.attributes.len() * reps);
    for a in &concept.attributes {
        let noun = RELATIONS[a.relation].noun;
        for rep in 0..reps {
            out.push(render(TEMPLATES[rep % TEMPLATES.len()], &concept.name, noun, &a.value));
        }
    }
    out
}

fn encode_sentences(tokenizer: &Tokenizer, sentences: &[String]) -> Result<Vec<u32>> {
    let mut stream = Vec::new();
    for s in sentences {
        stream.extend(tokenizer.tokenize(s)?.into_iter().map(|t| t as u32));
        stream.push(tokenizer.eos_id() as u32);
    }
    Ok(stream)
}

impl Corpus {
    pub fn concept(&self, id: usize) -> &Concept {
        &self.concepts[id]
    }

    /// Multiple-choice probes of one concept, in attribute order.
    pub fn questions_for(&self, concept: usize) -> Vec<&ProbeQuestion> {
        self.questions.iter().filter(|q| q.concept == concept).collect()
    }

    pub fn concepts_in(&self, tier: Tier) -> Vec<usize> {
        self.concepts.iter().filter(|c| c.tier == tier).map(|c| c.id).collect()
    }

    /// Concepts with withheld facts.
    pub fn finetune_concepts(&self) -> Vec<usize> {
        self.concepts.iter().filter(|c| c.has_withheld()).map(|c| c.id).collect()
    }

    pub fn is_withheld(&self, q: &ProbeQuestion) -> bool {
        self.concepts[q.concept]
            .attributes
            .iter()
            .any(|a| a.relation == q.relation && a.withheld)
    }

    /// Probes of the facts seen in pretraining.
    pub fn known_questions(&self) -> Vec<ProbeQuestion> {
        self.questions.iter().filter(|q| !self.is_withheld(q)).cloned().collect()
    }

    /// Probes of the withheld facts.
    pub fn withheld_questions(&self) -> Vec<ProbeQuestion> {
        self.questions.iter().filter(|q| self.is_withheld(q)).cloned().collect()
    }

    /// Training text covering every fact (withheld ones included) of the
    /// given concepts, `reps` renderings per fact, shuffled with `seed`.
    pub fn fact_stream(&self, concepts: &[usize], reps: usize, seed: u64) -> Result<Vec<u32>> {
        let mut sentences = Vec::new();
        for &c in concepts {
            sentences.extend(fact_sentences(&self.concepts[c], reps));
        }
        sentences.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        encode_sentences(&self.tokenizer, &sentences)
    }

    /// Splits the stream into sentences (without the trailing `<eos>`).
    pub fn sentences(&self) -> Result<Vec<String>> {
        let eos = self.tokenizer.eos_id() as u32;
        self.stream
            .split(|&t| t == eos)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let ids: Vec<usize> = s.iter().map(|&t| t as usize).collect();
                self.tokenizer.detokenize(&ids)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_concepts: 18,
            repetitions: [6, 3, 1],
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn tier_counts_split_evenly() {
        assert_eq!(CorpusConfig::default().tier_counts(), [10, 10, 10]);
        let c = CorpusConfig {
            n_concepts: 20,
            ..CorpusConfig::default()
        };
        assert_eq!(c.tier_counts().iter().sum::<usize>(), 20);
    }

    #[test]
    fn config_errors() {
        let mut c = small();
        c.tier_ratios = [0.5, 0.5, 0.5];
        assert!(matches!(generate_corpus(&c), Err(Error::Config(_))));
        let mut c = small();
        c.repetitions = [4, 4, 1];
        assert!(generate_corpus(&c).is_err());
        let mut c = small();
        c.n_concepts = 12;
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn distractors_never_match_gold() {
        let corpus = generate_corpus(&small()).unwrap();
        for c in &corpus.concepts {
            assert_eq!(c.attributes.len(), 10);
            for a in &c.attributes {
                assert!(!a.distractors.contains(&a.value));
            }
        }
        for q in &corpus.questions {
            let gold = &q.options[q.gold_option];
            assert_eq!(gold, &q.answer);
            assert_eq!(q.options.iter().filter(|o| *o == gold).count(), 1);
        }
    }

    #[test]
    fn withheld_facts_stay_out_of_stream() {
        let cfg = CorpusConfig {
            finetune_concepts: 3,
            withheld_facts: 2,
            ..small()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let chosen = corpus.finetune_concepts();
        assert_eq!(chosen.len(), 3);
        assert!(chosen.iter().all(|&c| corpus.concepts[c].tier == Tier::High));
        assert_eq!(corpus.withheld_questions().len(), 6);
        assert_eq!(corpus.known_questions().len() + 6, corpus.questions.len());
        let sentences: Vec<String> = corpus.sentences().unwrap().iter().map(|s| format!(" {s} ")).collect();
        for q in corpus.withheld_questions() {
            let c = &corpus.concepts[q.concept];
            let name = format!(" {} ", c.name);
            let noun = format!(" {} ", RELATIONS[q.relation].noun);
            assert!(sentences.iter().all(|s| !(s.contains(&name) && s.contains(&noun))));
        }
        let full = corpus.fact_stream(&chosen, 1, 0).unwrap();
        assert_eq!(full.iter().filter(|&&t| t as usize == corpus.tokenizer.eos_id()).count(), 30);
    }
}
