//! Hallucination estimators: semantic entropy over sampled answers and local
//! intrinsic dimension (LID) of answer activations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{ProbeQuestion, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{Capture, GenerateOptions, Sampler, TransformerWeights};
use crate::surgery::OEG_MAX_TOKENS;

/// Default neighbourhood size for LID.
pub const DEFAULT_NEIGHBOURS: usize = 20;

/// Case-folds, strips ASCII punctuation and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let stripped: String = text
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub tokens: Vec<usize>,
    pub text: String,
    pub seed: u64,
}

impl AnswerSample {
    pub fn from_tokens(tokenizer: &Tokenizer, tokens: Vec<usize>, seed: u64) -> Result<Self> {
        let words: Vec<usize> = tokens.iter().copied().filter(|&t| t != tokenizer.eos_id()).collect();
        let text = normalize(&tokenizer.detokenize(&words)?);
        Ok(Self { tokens, text, seed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub n_samples: usize,
    pub temperature: f32,
    pub seed: u64,
    pub max_new: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            n_samples: 10,
            temperature: 1.0,
            seed: 0,
            max_new: OEG_MAX_TOKENS,
        }
    }
}

/// Draws `n_samples` temperature-sampled answers to `question`. Sample `i`
/// uses seed `seed + i`, so the result is reproducible.
pub fn sample_answers(
    weights: &TransformerWeights,
    tokenizer: &Tokenizer,
    question: &ProbeQuestion,
    opts: &SamplingOptions,
) -> Result<Vec<AnswerSample>> {
    if opts.n_samples < 2 {
        return Err(Error::Usage(format!("need at least 2 samples, got {}", opts.n_samples)));
    }
    (0..opts.n_samples as u64)
        .map(|i| {
            let seed = opts.seed.wrapping_add(i);
            let gen = GenerateOptions {
                max_new: opts.max_new,
                sampler: Sampler::Temperature(opts.temperature),
                seed,
                stop_token: Some(tokenizer.eos_id()),
                mask: None,
            };
            let tokens = weights.generate(&question.prompt, &gen)?;
            AnswerSample::from_tokens(tokenizer, tokens, seed)
        })
        .collect()
}

/// Samples grouped by normalized text. Clusters are ordered by text, so
/// the grouping does not depend on sample order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub texts: Vec<String>,
    pub total: usize,
}

impl ClusterSet {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut total = 0;
        for (i, t) in texts.into_iter().enumerate() {
            groups.entry(normalize(t)).or_default().push(i);
            total += 1;
        }
        let (texts, clusters) = groups.into_iter().unzip();
        Self { clusters, texts, total }
    }

    pub fn from_samples(samples: &[AnswerSample]) -> Self {
        Self::from_texts(samples.iter().map(|s| s.text.as_str()))
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// `p(C_i|x)`: the fraction of samples in each cluster.
    pub fn weights(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .map(|c| c.len() as f64 / self.total as f64)
            .collect()
    }

    /// `−(1/|C|) Σ_i log p(C_i|x)`.
    pub fn semantic_entropy(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Usage("semantic entropy of zero samples".into()));
        }
        let sum: f64 = self.weights().iter().map(|p| p.ln()).sum();
        Ok(sum.abs() / self.len() as f64)
    }
}

pub fn semantic_entropy(samples: &[AnswerSample]) -> Result<f64> {
    ClusterSet::from_samples(samples).semantic_entropy()
}

/// Row-major activation vectors of equal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("point cloud rows differ in length".into()));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn distances_from(&self, i: usize) -> Vec<f64> {
        let x = self.row(i);
        (0..self.len())
            .filter(|&j| j != i)
            .map(|j| {
                self.row(j)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Maximum-likelihood LID of point `i` from its `t` nearest neighbours:
/// `((1/(T−1)) Σ_{j<T} log(Q_T/Q_j))⁻¹`. Neighbours at distance zero are
/// skipped; `None` means too few distinct neighbours remain or they are all
/// equidistant.
pub fn lid_mle(cloud: &PointCloud, i: usize, t: usize) -> Result<Option<f64>> {
    let n = cloud.len();
    if t < 2 || t + 1 > n {
        return Err(Error::Usage(format!("LID needs 2 <= T <= {}, got {t}", n.saturating_sub(1))));
    }
    if i >= n {
        return Err(Error::Usage(format!("point {i} outside cloud of {n}")));
    }
    let mut dist = cloud.distances_from(i);
    let before = dist.len();
    dist.retain(|&d| d > 0.0);
    if dist.len() < before {
        warn!("point {i}: skipped {} duplicate neighbours", before - dist.len());
    }
    if dist.len() < t {
        return Ok(None);
    }
    dist.select_nth_unstable_by(t - 1, |a, b| a.total_cmp(b));
    let q_t = dist[t - 1];
    let sum: f64 = dist[..t - 1].iter().map(|q| (q_t / q).ln()).sum();
    if sum <= 0.0 {
        return Ok(None);
    }
    Ok(Some((t - 1) as f64 / sum))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            _ => Err(Error::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

pub fn aggregate(values: &[f64], how: Aggregation) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(match how {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                (v[m - 1] + v[m]) / 2.0
            }
        }
    })
}

/// Per-point estimates for every point of the cloud.
pub fn lid_all(cloud: &PointCloud, t: usize) -> Result<Vec<Option<f64>>> {
    (0..cloud.len()).map(|i| lid_mle(cloud, i, t)).collect()
}

/// Aggregated LID over the cloud, ignoring excluded points.
pub fn lid_cloud(cloud: &PointCloud, t: usize, how: Aggregation) -> Result<f64> {
    let values: Vec<f64> = lid_all(cloud, t)?.into_iter().flatten().collect();
    aggregate(&values, how).ok_or_else(|| Error::Data("every point was excluded from the LID estimate".into()))
}

/// Greedy answers to `questions` (stopping at `<eos>`, which is dropped).
pub fn greedy_answers(
    weights: &TransformerWeights,
    tokenizer: &Tokenizer,
    questions: &[ProbeQuestion],
) -> Result<Vec<Vec<usize>>> {
    let prompts: Vec<Vec<usize>> = questions.iter().map(|q| q.prompt.clone()).collect();
    let eos = tokenizer.eos_id();
    let outs = weights.generate_greedy_batch(&prompts, OEG_MAX_TOKENS, Some(eos), None)?;
    Ok(outs
        .into_iter()
        .map(|mut o| {
            if o.last() == Some(&eos) {
                o.pop();
            }
            o
        })
        .collect())
}

/// Last-layer hidden state at the final token of each prompt + answer.
pub fn answer_activations(
    weights: &TransformerWeights,
    questions: &[ProbeQuestion],
    answers: &[Vec<usize>],
) -> Result<PointCloud> {
    if questions.len() != answers.len() {
        return Err(Error::Dimension(format!(
            "{} questions but {} answers",
            questions.len(),
            answers.len()
        )));
    }
    let max = weights.config.max_seq;
    let seqs: Vec<Vec<usize>> = questions
        .iter()
        .zip(answers)
        .map(|(q, a)| {
            let mut s = q.prompt.clone();
            s.extend_from_slice(a);
            s.truncate(max);
            s
        })
        .collect();
    let mut data = Vec::with_capacity(seqs.len() * weights.config.d_model);
    for chunk in seqs.chunks(128) {
        let out = weights.forward_batch(chunk, None, &Capture::default())?;
        for (b, s) in chunk.iter().enumerate() {
            data.extend(out.hidden_at(b, s.len() - 1).iter().map(|&v| v as f64));
        }
    }
    PointCloud::new(data, weights.config.d_model)
}

/// Neighbourhood size actually used for a cloud of `n` points.
pub fn effective_neighbours(t: usize, n: usize) -> Result<usize> {
    let t = t.min(n.saturating_sub(1));
    if t < 2 {
        return Err(Error::Usage(format!("a cloud of {n} activations is too small for LID")));
    }
    Ok(t)
}

/// Aggregated LID of the greedy-answer activations for `questions`.
pub fn lid_for_answers(
    weights: &TransformerWeights,
    tokenizer: &Tokenizer,
    questions: &[ProbeQuestion],
    t: usize,
    how: Aggregation,
) -> Result<f64> {
    let t = effective_neighbours(t, questions.len())?;
    let answers = greedy_answers(weights, tokenizer, questions)?;
    let cloud = answer_activations(weights, questions, &answers)?;
    lid_cloud(&cloud, t, how)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallucinationOptions {
    pub sampling: SamplingOptions,
    pub neighbours: usize,
    pub aggregation: Aggregation,
}

impl Default for HallucinationOptions {
    fn default() -> Self {
        Self {
            sampling: SamplingOptions::default(),
            neighbours: DEFAULT_NEIGHBOURS,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Metrics for one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub question: usize,
    pub concept: usize,
    pub relation: usize,
    pub greedy_answer: String,
    pub correct: bool,
    pub clusters: usize,
    pub semantic_entropy: f64,
    /// `None` when the point was excluded.
    pub lid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub rows: Vec<MetricRow>,
    pub mean_semantic_entropy: f64,
    pub lid: f64,
    pub accuracy: f64,
}

impl HallucinationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("question,concept,relation,greedy_answer,correct,clusters,semantic_entropy,lid\n");
        for r in &self.rows {
            let lid = r.lid.map_or(String::new(), |v| format!("{v:.6}"));
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{}",
                r.question, r.concept, r.relation, r.greedy_answer, r.correct, r.clusters, r.semantic_entropy, lid
            )
            .expect("string write");
        }
        out
    }
}

/// Semantic entropy and LID for every question. Question `i` samples with
/// seed `sampling.seed + i·n_samples`.
pub fn hallucination_metrics(
    weights: &TransformerWeights,
    tokenizer: &Tokenizer,
    questions: &[ProbeQuestion],
    opts: &HallucinationOptions,
) -> Result<HallucinationReport> {
    let t = effective_neighbours(opts.neighbours, questions.len())?;
    let answers = greedy_answers(weights, tokenizer, questions)?;
    let cloud = answer_activations(weights, questions, &answers)?;
    let lids = lid_all(&cloud, t)?;
    let mut rows = Vec::with_capacity(questions.len());
    for (i, ((q, a), lid)) in questions.iter().zip(&answers).zip(lids).enumerate() {
        let sampling = SamplingOptions {
            seed: opts
                .sampling
                .seed
                .wrapping_add((i * opts.sampling.n_samples) as u64),
            ..opts.sampling.clone()
        };
        let samples = sample_answers(weights, tokenizer, q, &sampling)?;
        let clusters = ClusterSet::from_samples(&samples);
        let greedy = AnswerSample::from_tokens(tokenizer, a.clone(), 0)?;
        let gold = normalize(&tokenizer.detokenize(&q.answer)?);
        rows.push(MetricRow {
            question: i,
            concept: q.concept,
            relation: q.relation,
            correct: greedy.text == gold,
            greedy_answer: greedy.text,
            clusters: clusters.len(),
            semantic_entropy: clusters.semantic_entropy()?,
            lid,
        });
    }
    let lid_values: Vec<f64> = rows.iter().filter_map(|r| r.lid).collect();
    let lid = aggregate(&lid_values, opts.aggregation)
        .ok_or_else(|| Error::Data("every point was excluded from the LID estimate".into()))?;
    let n = rows.len().max(1) as f64;
    Ok(HallucinationReport {
        mean_semantic_entropy: rows.iter().map(|r| r.semantic_entropy).sum::<f64>() / n,
        accuracy: rows.iter().filter(|r| r.correct).count() as f64 / n,
        lid,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Paris ,  the  CITY. "), "paris the city");
        assert_eq!(normalize("..."), "");
    }

    #[test]
    fn entropy_of_clusters() {
        let one = ClusterSet::from_texts(["a", "A", "a ."]);
        assert_eq!(one.len(), 1);
        assert_eq!(one.semantic_entropy().unwrap(), 0.0);
        let two = ClusterSet::from_texts(["a", "b", "b", "a"]);
        assert_abs_diff_eq!(two.semantic_entropy().unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let four = ClusterSet::from_texts(["a", "b", "c", "d"]);
        assert_abs_diff_eq!(four.semantic_entropy().unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert!(ClusterSet::from_texts([]).semantic_entropy().is_err());
    }

    #[test]
    fn lid_hand_case() {
        let cloud = PointCloud::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let m = lid_mle(&cloud, 0, 2).unwrap().unwrap();
        assert_abs_diff_eq!(m, 1.0 / 2f64.ln(), epsilon = 1e-12);
        assert!(lid_mle(&cloud, 0, 3).is_err());
        assert!(lid_mle(&cloud, 0, 1).is_err());
    }

    #[test]
    fn duplicates_are_excluded() {
        let cloud = PointCloud::from_rows(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert_eq!(lid_mle(&cloud, 0, 2).unwrap(), None);
        assert!(matches!(lid_cloud(&cloud, 2, Aggregation::Mean), Err(Error::Data(_))));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(aggregate(&[3.0, 1.0, 2.0, 10.0], Aggregation::Median), Some(2.5));
        assert_eq!(aggregate(&[], Aggregation::Mean), None);
    }
}
