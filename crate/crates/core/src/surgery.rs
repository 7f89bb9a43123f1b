//! Coefficient collection, contrastive ranking of value vectors, top-k
//! masking, and the specialization score.
//!
//! For a concept, the mean post-nonlinearity coefficients on its related
//! questions (`m̄`) and on irrelevant questions (`m̄*`) are compared per unit.
//! Units with the largest `|m̄_j − m̄*_j|` are masked and both question sets
//! are re-scored. The score is
//!
//! ```text
//! PSS = |general_after − specific_after| / base
//! ```
//!
//! where `base` is the unmasked accuracy over related ∪ irrelevant.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptProbeSet, ProbeKind, ProbeQuestion, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{skip_layers_for, Capture, MaskSpec, PositionSelector, TransformerWeights};
use crate::tensor::Tensor;

/// Mask ratios averaged into a concept's score.
pub const DEFAULT_RATIOS: [f64; 5] = [0.10, 0.20, 0.30, 0.40, 0.50];

/// Greedy token budget for open-ended answers.
pub const OEG_MAX_TOKENS: usize = 24;

/// Token budget when searching a generated continuation for an option label.
pub const MCQ_GENERATIVE_TOKENS: usize = 30;

/// Anything that can score continuations and answer prompts greedily.
/// [`TransformerWeights`] is the real implementation.
pub trait Responder {
    fn logliks(&self, pairs: &[(Vec<usize>, Vec<usize>)], mask: Option<&MaskSpec>) -> Result<Vec<f64>>;

    fn greedy(
        &self,
        prompts: &[Vec<usize>],
        max_new: usize,
        stop_token: Option<usize>,
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<Vec<usize>>>;
}

impl Responder for TransformerWeights {
    fn logliks(&self, pairs: &[(Vec<usize>, Vec<usize>)], mask: Option<&MaskSpec>) -> Result<Vec<f64>> {
        self.sequence_logliks(pairs, mask)
    }

    fn greedy(
        &self,
        prompts: &[Vec<usize>],
        max_new: usize,
        stop_token: Option<usize>,
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<Vec<usize>>> {
        self.generate_greedy_batch(prompts, max_new, stop_token, mask)
    }
}

/// Positions of `prompt ++ answer` whose coefficients are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientPositions {
    /// The positions holding the answer tokens.
    #[default]
    AnswerTokens,
    /// The last prompt position, where the first answer token is predicted.
    AnswerSlot,
    /// Every position.
    All,
}

impl std::str::FromStr for CoefficientPositions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "answer-tokens" => Ok(Self::AnswerTokens),
            "answer-slot" => Ok(Self::AnswerSlot),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown position selector {other:?}"))),
        }
    }
}

impl CoefficientPositions {
    fn positions(self, q: &ProbeQuestion) -> Vec<usize> {
        let p = q.prompt.len();
        match self {
            Self::AnswerTokens => (p..p + q.answer.len()).collect(),
            Self::AnswerSlot => vec![p - 1],
            Self::All => (0..p + q.answer.len()).collect(),
        }
    }
}

/// Element-wise mean coefficients per layer over every retained position of
/// every question.
pub fn collect_mean_coefficients(
    weights: &TransformerWeights,
    questions: &[ProbeQuestion],
    positions: CoefficientPositions,
) -> Result<Vec<Tensor>> {
    if questions.is_empty() {
        return Err(Error::Usage("no questions to collect coefficients from".into()));
    }
    let n = weights.config.d_mlp;
    let mut sums = vec![vec![0.0f64; n]; weights.config.n_layers];
    let mut rows = 0usize;
    for chunk in questions.chunks(128) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(ProbeQuestion::with_answer).collect();
        let selector = PositionSelector::Explicit(chunk.iter().map(|q| positions.positions(q)).collect());
        let fwd = weights.forward_batch(&seqs, None, &Capture::coefficients(selector))?;
        let trace = fwd.trace.expect("coefficients requested");
        rows += trace.positions.len();
        for (sum, layer) in sums.iter_mut().zip(&trace.layers) {
            for r in 0..trace.positions.len() {
                for (s, &v) in sum.iter_mut().zip(layer.row(r)) {
                    *s += f64::from(v);
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| Tensor::vector(s.into_iter().map(|v| (v / rows as f64) as f32).collect()))
        .collect())
}

/// Mean coefficients of a concept's related (`m̄`) and irrelevant (`m̄*`)
/// questions.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCoefficients {
    pub related: Vec<Tensor>,
    pub irrelevant: Vec<Tensor>,
}

impl MeanCoefficients {
    pub fn collect(
        weights: &TransformerWeights,
        related: &[ProbeQuestion],
        irrelevant: &[ProbeQuestion],
        positions: CoefficientPositions,
    ) -> Result<Self> {
        Ok(Self {
            related: collect_mean_coefficients(weights, related, positions)?,
            irrelevant: collect_mean_coefficients(weights, irrelevant, positions)?,
        })
    }

    /// [`rank_vectors`] applied to every layer.
    pub fn rankings(&self) -> Result<Vec<Vec<usize>>> {
        self.related
            .iter()
            .zip(&self.irrelevant)
            .map(|(r, i)| rank_vectors(r.data(), i.data()))
            .collect()
    }

    /// Units ordered by raw mean coefficient of the related set, largest
    /// first (ties by ascending index).
    pub fn magnitude_rankings(&self) -> Vec<Vec<usize>> {
        self.related
            .iter()
            .map(|r| {
                let d = r.data();
                let mut order: Vec<usize> = (0..d.len()).collect();
                order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
                order
            })
            .collect()
    }
}

/// Unit indices (0-based) sorted by `|related_j − irrelevant_j|` descending,
/// ties by ascending index.
pub fn rank_vectors(related: &[f32], irrelevant: &[f32]) -> Result<Vec<usize>> {
    if related.len() != irrelevant.len() {
        return Err(Error::Dimension(format!(
            "coefficient lengths differ: {} vs {}",
            related.len(),
            irrelevant.len()
        )));
    }
    let diff: Vec<f64> = related
        .iter()
        .zip(irrelevant)
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
        .collect();
    let mut order: Vec<usize> = (0..diff.len()).collect();
    order.sort_by(|&a, &b| diff[b].total_cmp(&diff[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Number of units selected at ratio `k` of `n`: round half up, at least one
/// when `k > 0`.
pub fn mask_count(k: f64, n: usize) -> usize {
    if k <= 0.0 {
        return 0;
    }
    ((k * n as f64 + 0.5).floor() as usize).clamp(1, n)
}

/// Masks the top `mask_count(k, n)` ranked units of every layer from
/// `skip_layers` on.
pub fn build_mask(rankings: &[Vec<usize>], k: f64, skip_layers: usize) -> Result<MaskSpec> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Usage(format!("mask ratio {k} outside [0, 1]")));
    }
    let n = rankings.first().map_or(0, Vec::len);
    let count = mask_count(k, n);
    let layers = rankings
        .iter()
        .enumerate()
        .map(|(l, order)| if l < skip_layers { Vec::new() } else { order[..count].to_vec() })
        .collect();
    MaskSpec::new(layers, skip_layers, n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McqMode {
    /// Highest total log-likelihood among the four options.
    #[default]
    Loglik,
    /// Three solved examples, then the first option label the model emits.
    Generative,
}

impl std::str::FromStr for McqMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loglik" => Ok(Self::Loglik),
            "generative" => Ok(Self::Generative),
            other => Err(Error::Config(format!("unknown MCQ mode {other:?}"))),
        }
    }
}

/// Token ids the generative mode needs from the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTokens {
    pub options: usize,
    pub close: usize,
    pub labels: [usize; 4],
    pub eos: usize,
}

impl PromptTokens {
    pub fn from_tokenizer(tk: &Tokenizer) -> Result<Self> {
        Ok(Self {
            options: tk.id("options")?,
            close: tk.id(")")?,
            labels: [tk.id("A")?, tk.id("B")?, tk.id("C")?, tk.id("D")?],
            eos: tk.eos_id(),
        })
    }

    fn render(&self, q: &ProbeQuestion, solved: bool) -> Vec<usize> {
        // question ... ? options A ) x B ) y C ) z D ) w answer : [label]
        let answer_at = q.prompt.len() - 2;
        let mut out = q.prompt[..answer_at].to_vec();
        out.push(self.options);
        for (label, opt) in self.labels.iter().zip(&q.options) {
            out.push(*label);
            out.push(self.close);
            out.extend_from_slice(opt);
        }
        out.extend_from_slice(&q.prompt[answer_at..]);
        if solved {
            out.push(self.labels[q.gold_option]);
            out.push(self.eos);
        }
        out
    }
}

fn check_options(questions: &[ProbeQuestion]) -> Result<()> {
    if let Some(q) = questions.iter().find(|q| q.options.len() != 4) {
        return Err(Error::Data(format!(
            "question about concept {} has {} options, expected 4",
            q.concept,
            q.options.len()
        )));
    }
    Ok(())
}

/// Per-question correctness of multiple-choice answers.
pub fn mcq_correct<R: Responder + ?Sized>(
    model: &R,
    questions: &[ProbeQuestion],
    mask: Option<&MaskSpec>,
    mode: McqMode,
    tokens: Option<&PromptTokens>,
) -> Result<Vec<bool>> {
    check_options(questions)?;
    match mode {
        McqMode::Loglik => {
            let pairs: Vec<(Vec<usize>, Vec<usize>)> = questions
                .iter()
                .flat_map(|q| q.options.iter().map(|o| (q.prompt.clone(), o.clone())))
                .collect();
            let scores = model.logliks(&pairs, mask)?;
            Ok(questions
                .iter()
                .zip(scores.chunks(4))
                .map(|(q, s)| {
                    let mut best = 0;
                    for i in 1..4 {
                        if s[i] > s[best] {
                            best = i;
                        }
                    }
                    best == q.gold_option
                })
                .collect())
        }
        McqMode::Generative => {
            let tokens =
                tokens.ok_or_else(|| Error::Usage("generative MCQ needs the option label tokens".into()))?;
            let n = questions.len();
            let prompts: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    let mut p = Vec::new();
                    for s in 1..=3 {
                        if n > 1 {
                            p.extend(tokens.render(&questions[(i + s) % n], true));
                        }
                    }
                    p.extend(tokens.render(&questions[i], false));
                    p
                })
                .collect();
            let outs = model.greedy(&prompts, MCQ_GENERATIVE_TOKENS, None, mask)?;
            Ok(questions
                .iter()
                .zip(outs)
                .map(|(q, out)| {
                    out.iter()
                        .find_map(|t| tokens.labels.iter().position(|l| l == t))
                        == Some(q.gold_option)
                })
                .collect())
        }
    }
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
}

/// Fraction of multiple-choice questions answered correctly.
pub fn evaluate_mcq<R: Responder + ?Sized>(
    model: &R,
    questions: &[ProbeQuestion],
    mask: Option<&MaskSpec>,
    mode: McqMode,
    tokens: Option<&PromptTokens>,
) -> Result<f64> {
    Ok(fraction(&mcq_correct(model, questions, mask, mode, tokens)?))
}

/// True when `needle` occurs as a contiguous run of `haystack`. Words are
/// whole tokens of a closed vocabulary, so this is containment of the
/// normalized gold text in the normalized output.
pub fn contains_answer(haystack: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Per-question correctness of greedy open-ended answers.
pub fn oeg_correct<R: Responder + ?Sized>(
    model: &R,
    questions: &[ProbeQuestion],
    mask: Option<&MaskSpec>,
    stop_token: Option<usize>,
) -> Result<Vec<bool>> {
    let prompts: Vec<Vec<usize>> = questions.iter().map(|q| q.prompt.clone()).collect();
    let outs = model.greedy(&prompts, OEG_MAX_TOKENS, stop_token, mask)?;
    Ok(questions
        .iter()
        .zip(outs)
        .map(|(q, out)| contains_answer(&out, &q.answer))
        .collect())
}

pub fn evaluate_oeg<R: Responder + ?Sized>(
    model: &R,
    questions: &[ProbeQuestion],
    mask: Option<&MaskSpec>,
    stop_token: Option<usize>,
) -> Result<f64> {
    Ok(fraction(&oeg_correct(model, questions, mask, stop_token)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurgeryOptions {
    pub positions: CoefficientPositions,
    pub mcq_mode: McqMode,
    /// Score open-ended answers instead of multiple choice.
    pub kind: ProbeKind,
    /// Rank on the even-indexed questions of each set and score on the
    /// odd-indexed ones. Off by default: the same questions both locate and
    /// score the knowledge.
    pub held_out_split: bool,
}

impl Default for SurgeryOptions {
    fn default() -> Self {
        Self {
            positions: CoefficientPositions::default(),
            mcq_mode: McqMode::default(),
            kind: ProbeKind::Mcq,
            held_out_split: false,
        }
    }
}

/// Scores before and after masking one concept's top-ranked units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub concept: usize,
    pub ratio: f64,
    pub masked_per_layer: usize,
    pub specific_before: f64,
    pub general_before: f64,
    /// Unmasked accuracy on related ∪ irrelevant.
    pub base: f64,
    pub specific_after: f64,
    pub general_after: f64,
    /// `None` when `base` is zero.
    pub pss: Option<f64>,
}

impl SurgeryReport {
    pub fn usable(&self) -> bool {
        self.pss.is_some()
    }

    pub fn difference(&self) -> f64 {
        self.general_after - self.specific_after
    }
}

pub fn pss_value(general_after: f64, specific_after: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| (general_after - specific_after).abs() / base)
}

/// A concept's rankings and unmasked scores, reusable across mask ratios.
pub struct PreparedConcept<'a, R: ?Sized> {
    model: &'a R,
    pub concept: usize,
    pub rankings: Vec<Vec<usize>>,
    related: Vec<ProbeQuestion>,
    irrelevant: Vec<ProbeQuestion>,
    pub specific_before: f64,
    pub general_before: f64,
    pub base: f64,
    options: SurgeryOptions,
    tokens: Option<PromptTokens>,
    stop_token: Option<usize>,
    skip_layers: usize,
}

fn split_even_odd(qs: &[ProbeQuestion]) -> (Vec<ProbeQuestion>, Vec<ProbeQuestion>) {
    let even = qs.iter().step_by(2).cloned().collect();
    let odd = qs.iter().skip(1).step_by(2).cloned().collect();
    (even, odd)
}

/// Context for evaluating surgery on one model.
#[derive(Clone, Debug)]
pub struct SurgeryContext {
    pub options: SurgeryOptions,
    /// Needed for generative MCQ.
    pub tokens: Option<PromptTokens>,
    /// Stops open-ended generation early.
    pub stop_token: Option<usize>,
}

impl SurgeryContext {
    pub fn new(options: SurgeryOptions, tokenizer: &Tokenizer) -> Result<Self> {
        Ok(Self {
            options,
            tokens: Some(PromptTokens::from_tokenizer(tokenizer)?),
            stop_token: Some(tokenizer.eos_id()),
        })
    }

    fn correct<R: Responder + ?Sized>(
        &self,
        model: &R,
        qs: &[ProbeQuestion],
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<bool>> {
        match self.options.kind {
            ProbeKind::Mcq => mcq_correct(model, qs, mask, self.options.mcq_mode, self.tokens.as_ref()),
            ProbeKind::Oeg => oeg_correct(model, qs, mask, self.stop_token),
        }
    }

    /// Ranks the concept's units and scores the unmasked model.
    pub fn prepare<'a>(
        &self,
        weights: &'a TransformerWeights,
        set: &ConceptProbeSet,
    ) -> Result<PreparedConcept<'a, TransformerWeights>> {
        let (rank_rel, rank_irr, score_rel, score_irr) = if self.options.held_out_split {
            let (re, ro) = split_even_odd(&set.related);
            let (ie, io) = split_even_odd(&set.irrelevant);
            (re, ie, ro, io)
        } else {
            (
                set.related.clone(),
                set.irrelevant.clone(),
                set.related.clone(),
                set.irrelevant.clone(),
            )
        };
        let means = MeanCoefficients::collect(weights, &rank_rel, &rank_irr, self.options.positions)?;
        let rankings = means.rankings()?;
        self.prepare_ranked(weights, set.concept, rankings, score_rel, score_irr)
    }

    /// Like [`prepare`](Self::prepare) with precomputed rankings.
    pub fn prepare_ranked<'a, R: Responder + ?Sized>(
        &self,
        model: &'a R,
        concept: usize,
        rankings: Vec<Vec<usize>>,
        related: Vec<ProbeQuestion>,
        irrelevant: Vec<ProbeQuestion>,
    ) -> Result<PreparedConcept<'a, R>> {
        let mut all = related.clone();
        all.extend(irrelevant.iter().cloned());
        let flags = self.correct(model, &all, None)?;
        let (rel_flags, irr_flags) = flags.split_at(related.len());
        let skip_layers = skip_layers_for(rankings.len());
        Ok(PreparedConcept {
            model,
            concept,
            rankings,
            related,
            irrelevant,
            specific_before: fraction(rel_flags),
            general_before: fraction(irr_flags),
            base: fraction(&flags),
            options: self.options.clone(),
            tokens: self.tokens.clone(),
            stop_token: self.stop_token,
            skip_layers,
        })
    }
}

impl<R: Responder + ?Sized> PreparedConcept<'_, R> {
    pub fn with_skip_layers(mut self, skip_layers: usize) -> Self {
        self.skip_layers = skip_layers;
        self
    }

    pub fn mask(&self, ratio: f64) -> Result<MaskSpec> {
        build_mask(&self.rankings, ratio, self.skip_layers)
    }

    pub fn report(&self, ratio: f64) -> Result<SurgeryReport> {
        let mask = self.mask(ratio)?;
        let ctx = SurgeryContext {
            options: self.options.clone(),
            tokens: self.tokens.clone(),
            stop_token: self.stop_token,
        };
        let mut all = self.related.clone();
        all.extend(self.irrelevant.iter().cloned());
        let flags = ctx.correct(self.model, &all, Some(&mask))?;
        let (rel, irr) = flags.split_at(self.related.len());
        let (specific_after, general_after) = (fraction(rel), fraction(irr));
        Ok(SurgeryReport {
            concept: self.concept,
            ratio,
            masked_per_layer: self.rankings.first().map_or(0, |r| mask_count(ratio, r.len())),
            specific_before: self.specific_before,
            general_before: self.general_before,
            base: self.base,
            specific_after,
            general_after,
            pss: pss_value(general_after, specific_after, self.base),
        })
    }
}

/// Surgery on one concept at one ratio.
pub fn run_surgery(
    weights: &TransformerWeights,
    set: &ConceptProbeSet,
    ratio: f64,
    ctx: &SurgeryContext,
) -> Result<SurgeryReport> {
    ctx.prepare(weights, set)?
        .with_skip_layers(weights.config.skip_layers())
        .report(ratio)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptPss {
    pub concept: usize,
    /// Mean over ratios; `None` when the concept is unusable.
    pub pss: Option<f64>,
}

/// Mean scores across usable concepts at one ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub general_after: f64,
    pub specific_after: f64,
    pub difference: f64,
    pub pss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<SurgeryReport>,
    pub concepts: Vec<ConceptPss>,
    /// Mean of the usable per-concept scores.
    pub aggregate: f64,
    pub curve: Vec<CurvePoint>,
}

impl SweepResult {
    pub fn reports_for(&self, concept: usize) -> Vec<&SurgeryReport> {
        self.reports.iter().filter(|r| r.concept == concept).collect()
    }

    pub fn concept_pss(&self, concept: usize) -> Option<f64> {
        self.concepts.iter().find(|c| c.concept == concept).and_then(|c| c.pss)
    }

    /// Reports as CSV with a header row.
    pub fn reports_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "concept,ratio,masked_per_layer,specific_before,general_before,base,specific_after,general_after,difference,pss"
        )
        .map_err(csv_err)?;
        for r in &self.reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.concept,
                r.ratio,
                r.masked_per_layer,
                r.specific_before,
                r.general_before,
                r.base,
                r.specific_after,
                r.general_after,
                r.difference(),
                r.pss.map_or(String::new(), |p| p.to_string())
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn curve_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "ratio,general_after,specific_after,difference,pss").map_err(csv_err)?;
        for p in &self.curve {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.ratio, p.general_after, p.specific_after, p.difference, p.pss
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }

    /// One JSON object per report, then one per curve point and a final
    /// aggregate record, each tagged with `"record"`.
    pub fn jsonl(&self, mut out: impl Write) -> Result<()> {
        let mut line = |v: serde_json::Value| -> Result<()> {
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n").map_err(csv_err)
        };
        for r in &self.reports {
            let mut v = serde_json::to_value(r)?;
            v["record"] = "report".into();
            v["difference"] = r.difference().into();
            line(v)?;
        }
        for c in &self.concepts {
            let mut v = serde_json::to_value(c)?;
            v["record"] = "concept".into();
            line(v)?;
        }
        for p in &self.curve {
            let mut v = serde_json::to_value(p)?;
            v["record"] = "curve".into();
            line(v)?;
        }
        line(serde_json::json!({"record": "aggregate", "pss": self.aggregate}))
    }
}

fn csv_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

/// Sweeps already-prepared concepts over `ratios`.
pub fn sweep_prepared<R: Responder + ?Sized>(prepared: &[PreparedConcept<'_, R>], ratios: &[f64]) -> Result<SweepResult> {
    if ratios.is_empty() {
        return Err(Error::Usage("no mask ratios".into()));
    }
    let mut reports = Vec::new();
    let mut concepts = Vec::new();
    for p in prepared {
        let rs: Vec<SurgeryReport> = ratios.iter().map(|&k| p.report(k)).collect::<Result<_>>()?;
        let pss = if p.base > 0.0 {
            Some(rs.iter().map(|r| r.pss.expect("base > 0")).sum::<f64>() / rs.len() as f64)
        } else {
            None
        };
        concepts.push(ConceptPss { concept: p.concept, pss });
        reports.extend(rs);
    }
    let usable: Vec<f64> = concepts.iter().filter_map(|c| c.pss).collect();
    if usable.is_empty() {
        return Err(Error::Usage("every concept has zero base accuracy".into()));
    }
    let aggregate = usable.iter().sum::<f64>() / usable.len() as f64;
    let curve = ratios
        .iter()
        .map(|&k| {
            let at: Vec<&SurgeryReport> = reports.iter().filter(|r| r.ratio == k && r.usable()).collect();
            let mean = |f: &dyn Fn(&SurgeryReport) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / at.len() as f64;
            CurvePoint {
                ratio: k,
                general_after: mean(&|r| r.general_after),
                specific_after: mean(&|r| r.specific_after),
                difference: mean(&|r| r.difference()),
                pss: mean(&|r| r.pss.unwrap_or(0.0)),
            }
        })
        .collect();
    Ok(SweepResult {
        reports,
        concepts,
        aggregate,
        curve,
    })
}

/// Per-concept score averaged over `ratios`, the aggregate over usable
/// concepts, and the mean General−Specific curve.
pub fn pss_sweep(
    weights: &TransformerWeights,
    sets: &[ConceptProbeSet],
    ratios: &[f64],
    ctx: &SurgeryContext,
) -> Result<SweepResult> {
    if ratios.is_empty() {
        return Err(Error::Usage("no mask ratios".into()));
    }
    let prepared: Vec<_> = sets
        .iter()
        .map(|s| Ok(ctx.prepare(weights, s)?.with_skip_layers(weights.config.skip_layers())))
        .collect::<Result<_>>()?;
    sweep_prepared(&prepared, ratios)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_by_absolute_difference() {
        assert_eq!(rank_vectors(&[0.9, 0.1, 0.5], &[0.1, 0.1, 0.1]).unwrap(), vec![0, 2, 1]);
        assert_eq!(rank_vectors(&[1.0; 4], &[1.0; 4]).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(rank_vectors(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn mask_counts_round_half_up() {
        assert_eq!(mask_count(0.10, 512), 51);
        assert_eq!(mask_count(0.0, 512), 0);
        assert_eq!(mask_count(0.001, 512), 1);
        assert_eq!(mask_count(0.5, 5), 3);
        assert_eq!(mask_count(1.0, 7), 7);
    }

    #[test]
    fn build_mask_respects_skip() {
        let rankings = vec![vec![2, 0, 1], vec![1, 2, 0]];
        let m = build_mask(&rankings, 1.0, 1).unwrap();
        assert!(m.layer(0).is_empty());
        assert_eq!(m.layer(1), &[0, 1, 2]);
        assert!(build_mask(&rankings, 0.0, 1).unwrap().is_empty());
        assert!(build_mask(&rankings, 1.5, 1).is_err());
    }

    #[test]
    fn pss_arithmetic() {
        assert!((pss_value(0.8, 0.2, 0.8).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(pss_value(0.5, 0.5, 0.9), Some(0.0));
        assert_eq!(pss_value(0.5, 0.1, 0.0), None);
    }

    #[test]
    fn containment() {
        assert!(contains_answer(&[4, 5, 6], &[5, 6]));
        assert!(!contains_answer(&[], &[5]));
        assert!(!contains_answer(&[5, 7, 6], &[5, 6]));
    }
}
