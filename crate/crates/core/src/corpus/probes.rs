use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::relations::{render, PROBE_TEMPLATE, RELATIONS};
use super::{Attribute, Concept, Corpus, Tokenizer};
use crate::error::{Error, Result};

/// Number of unrelated concepts whose questions form the irrelevant set.
pub const IRRELEVANT_CONCEPTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Mcq,
    Oeg,
}

/// A probe about one fact. Multiple-choice probes carry four options of
/// which exactly one (`gold_option`) equals `answer`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeQuestion {
    pub concept: usize,
    pub relation: usize,
    pub kind: ProbeKind,
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
    pub options: Vec<Vec<usize>>,
    pub gold_option: usize,
}

impl ProbeQuestion {
    pub(crate) fn multiple_choice(
        tokenizer: &Tokenizer,
        concept: &Concept,
        attr: &Attribute,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let noun = RELATIONS[attr.relation].noun;
        let prompt = tokenizer.tokenize(&render(PROBE_TEMPLATE, &concept.name, noun, ""))?;
        let answer = tokenizer.tokenize(&attr.value)?;
        let mut options = vec![answer.clone()];
        for d in &attr.distractors {
            options.push(tokenizer.tokenize(d)?);
        }
        options.shuffle(rng);
        let gold_option = options.iter().position(|o| *o == answer).expect("gold present");
        Ok(Self {
            concept: concept.id,
            relation: attr.relation,
            kind: ProbeKind::Mcq,
            prompt,
            answer,
            options,
            gold_option,
        })
    }

    /// The same fact asked as an open-ended question.
    pub fn open_ended(&self) -> Self {
        Self {
            kind: ProbeKind::Oeg,
            options: Vec::new(),
            gold_option: 0,
            ..self.clone()
        }
    }

    /// Prompt followed by the gold answer, the form used for coefficient
    /// collection.
    pub fn with_answer(&self) -> Vec<usize> {
        let mut v = self.prompt.clone();
        v.extend_from_slice(&self.answer);
        v
    }
}

/// A concept's related probes plus irrelevant probes drawn from concepts
/// that share no attribute value with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptProbeSet {
    pub concept: usize,
    pub related: Vec<ProbeQuestion>,
    pub irrelevant: Vec<ProbeQuestion>,
    pub irrelevant_concepts: Vec<usize>,
}

impl ConceptProbeSet {
    pub fn open_ended(&self) -> Self {
        Self {
            related: self.related.iter().map(ProbeQuestion::open_ended).collect(),
            irrelevant: self.irrelevant.iter().map(ProbeQuestion::open_ended).collect(),
            ..self.clone()
        }
    }

    /// The same set with the concept's withheld facts added to `related`.
    pub fn including_withheld(mut self, corpus: &Corpus) -> Self {
        self.related = corpus.questions_for(self.concept).into_iter().cloned().collect();
        self
    }

    /// Related followed by irrelevant probes.
    pub fn all(&self) -> impl Iterator<Item = &ProbeQuestion> {
        self.related.iter().chain(&self.irrelevant)
    }
}

/// Samples [`IRRELEVANT_CONCEPTS`] concepts sharing no attribute value with
/// `concept` (and, where possible, with each other) and gathers all of their
/// probes. Related probes cover the concept's pretraining facts only; see
/// [`ConceptProbeSet::including_withheld`].
pub fn build_probe_set(corpus: &Corpus, concept: usize, seed: u64) -> Result<ConceptProbeSet> {
    let target = corpus
        .concepts
        .get(concept)
        .ok_or_else(|| Error::Corpus(format!("no concept {concept}")))?;
    let candidates: Vec<usize> = corpus
        .concepts
        .iter()
        .filter(|c| c.id != concept && !c.has_withheld() && c.disjoint_from(target))
        .map(|c| c.id)
        .collect();
    if candidates.len() < IRRELEVANT_CONCEPTS {
        return Err(Error::Corpus(format!(
            "concept {concept} has only {} concepts without shared values",
            candidates.len()
        )));
    }
    // Greedy pass over a shuffled order keeps the irrelevant concepts
    // free of shared values among themselves too; the rest fill a shortfall.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (concept as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order = candidates;
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(IRRELEVANT_CONCEPTS);
    for &c in &order {
        if chosen.len() < IRRELEVANT_CONCEPTS
            && chosen.iter().all(|&o| corpus.concepts[o].disjoint_from(&corpus.concepts[c]))
        {
            chosen.push(c);
        }
    }
    for &c in &order {
        if chosen.len() < IRRELEVANT_CONCEPTS && !chosen.contains(&c) {
            chosen.push(c);
        }
    }
    chosen.sort_unstable();
    let related = corpus
        .questions_for(concept)
        .into_iter()
        .filter(|q| !corpus.is_withheld(q))
        .cloned()
        .collect();
    let irrelevant = chosen
        .iter()
        .flat_map(|&c| corpus.questions_for(c).into_iter().cloned())
        .collect();
    Ok(ConceptProbeSet {
        concept,
        related,
        irrelevant,
        irrelevant_concepts: chosen,
    })
}
