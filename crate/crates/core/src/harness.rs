//! Config-driven experiment commands with persisted, reproducible results.
//!
//! One TOML file describes a run. Every command writes its artifacts under
//! the output directory and appends a [`RunRecord`] line to
//! `results.jsonl` there:
//!
//! * `corpus/` corpus files (see [`Corpus::save`])
//! * `checkpoints/step-NNNNNN.ckpt` model checkpoints, each with a
//!   `.state` optimizer file next to it
//! * `model.ckpt` the final pretrained model
//! * `pss/` or `pss/step-NNNNNN/` sweep CSVs and records
//! * `finetune/` fine-tuned models and `finetune.csv`
//! * `hallucination.csv` per-question metrics

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_probe_set, generate_corpus, ConceptProbeSet, Corpus, CorpusConfig, ProbeQuestion, Tier};
use crate::error::{Error, Result};
use crate::finetune::{
    finetune, select_ft_columns, FinetuneVariant, SelectionRanking, TrainConfig, TrainState, Trainable, Trainer,
    VariantKind,
};
use crate::halluc::{hallucination_metrics, HallucinationOptions};
use crate::model::{ModelConfig, TransformerWeights};
use crate::stats::{pearson, spearman};
use crate::surgery::{
    evaluate_mcq, pss_sweep, CoefficientPositions, McqMode, SurgeryContext, SurgeryOptions, SweepResult,
    DEFAULT_RATIOS,
};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "PARAMSPEC_OUTPUT_DIR";
pub const RESULTS_LOG: &str = "results.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurgerySection {
    pub ratios: Vec<f64>,
    pub options: SurgeryOptions,
    /// Concepts to sweep; all trained concepts when absent.
    pub concepts: Option<Vec<usize>>,
    /// Seed for sampling each concept's irrelevant set.
    pub probe_seed: u64,
    /// Model to analyse; `model.ckpt` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Sweep every saved checkpoint instead of one model.
    pub all_checkpoints: bool,
}

impl Default for SurgerySection {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            options: SurgeryOptions::default(),
            concepts: None,
            probe_seed: 0,
            checkpoint: None,
            all_checkpoints: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    /// Optimizer settings. A partial table falls back to the pretraining
    /// defaults for the fields it leaves out.
    pub train: TrainConfig,
    pub variants: Vec<VariantKind>,
    pub ratio: f64,
    pub ranking: SelectionRanking,
    pub positions: CoefficientPositions,
    /// One fine-tune per variant and seed; the seed drives the data order
    /// and the random selection.
    pub seeds: Vec<u64>,
    /// Renderings of every fact of the fine-tuned concepts in the
    /// fine-tuning stream.
    pub repetitions: usize,
    /// Starting model; `model.ckpt` when absent.
    pub base_checkpoint: Option<PathBuf>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                steps: 300,
                ..TrainConfig::finetune_defaults()
            },
            variants: VariantKind::ALL.to_vec(),
            ratio: 0.5,
            ranking: SelectionRanking::default(),
            positions: CoefficientPositions::default(),
            seeds: (0..5).collect(),
            repetitions: 16,
            base_checkpoint: None,
        }
    }
}

/// Which questions the hallucination metrics use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionSource {
    /// Facts seen in pretraining.
    #[default]
    Trained,
    Withheld,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HallucinationSection {
    pub options: HallucinationOptions,
    pub questions: QuestionSource,
    pub max_questions: Option<usize>,
    /// Model to evaluate; `model.ckpt` when absent.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    /// `vocab_size` is always replaced by the corpus vocabulary size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Steps after which `train` saves a checkpoint.
    pub checkpoints: Vec<usize>,
    pub surgery: SurgerySection,
    pub finetune: FinetuneSection,
    pub hallucination: HallucinationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig {
                finetune_concepts: 5,
                ..CorpusConfig::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
            checkpoints: Vec::new(),
            surgery: SurgerySection::default(),
            finetune: FinetuneSection::default(),
            hallucination: HallucinationSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies [`OUTPUT_DIR_ENV`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.finetune.train.validate()?;
        if let Some(bad) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.train.steps) {
            return Err(Error::Config(format!(
                "checkpoint step {bad} outside [1, {}]",
                self.train.steps
            )));
        }
        if let Some(bad) = self.surgery.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("mask ratio {bad} outside [0, 1]")));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except `output_dir`.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical)?;
        Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.output_dir.join("corpus")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("step-{step:06}.ckpt"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join("model.ckpt")
    }

    pub fn results_log(&self) -> PathBuf {
        self.output_dir.join(RESULTS_LOG)
    }

    fn model_config(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            vocab_size: corpus.tokenizer.vocab_size(),
            ..self.model.clone()
        }
    }
}

/// The `.state` optimizer file saved next to a checkpoint.
pub fn state_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("state")
}

/// One line of the append-only results log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub command: String,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub labels: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl RunRecord {
    fn start(cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        Ok(Self {
            config_hash: cfg.hash()?,
            command: command.into(),
            started_ms: now_ms(),
            finished_ms: 0,
            labels: BTreeMap::new(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    fn finish(mut self, cfg: &ExperimentConfig) -> Result<Self> {
        self.finished_ms = now_ms();
        append_record(&cfg.results_log(), &self)?;
        Ok(self)
    }
}

pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(&line))
        .map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn tier_questions(corpus: &Corpus, tier: Tier) -> Vec<ProbeQuestion> {
    corpus
        .concepts_in(tier)
        .into_iter()
        .flat_map(|c| corpus.questions_for(c).into_iter().filter(|q| !corpus.is_withheld(q)).cloned())
        .collect()
}

/// Loads the run's corpus, generating and saving it on first use. A saved
/// corpus built from a different config is an error.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let dir = cfg.corpus_dir();
    if dir.join("meta.json").exists() {
        let corpus = Corpus::load(&dir)?;
        if corpus.config != cfg.corpus {
            return Err(Error::Config(format!(
                "{} was generated from a different corpus config; rerun gen-data",
                dir.display()
            )));
        }
        return Ok(corpus);
    }
    let corpus = generate_corpus(&cfg.corpus)?;
    corpus.save(&dir)?;
    Ok(corpus)
}

/// Writes the corpus files.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut rec = RunRecord::start(cfg, "gen-data")?;
    let corpus = generate_corpus(&cfg.corpus)?;
    corpus.save(cfg.corpus_dir())?;
    rec.metrics.insert("concepts".into(), corpus.concepts.len() as f64);
    rec.metrics.insert("questions".into(), corpus.questions.len() as f64);
    rec.metrics.insert("stream_tokens".into(), corpus.stream.len() as f64);
    rec.metrics.insert("vocab_size".into(), corpus.tokenizer.vocab_size() as f64);
    rec.artifacts.push(cfg.corpus_dir());
    rec.finish(cfg)
}

/// Multiple-choice accuracy per tier plus overall, keyed `mcq.<tier>` and
/// `mcq_accuracy`.
pub fn tier_accuracy(weights: &TransformerWeights, corpus: &Corpus) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut all = Vec::new();
    for tier in Tier::ALL {
        let qs = tier_questions(corpus, tier);
        if !qs.is_empty() {
            out.insert(format!("mcq.{tier}"), evaluate_mcq(weights, &qs, None, McqMode::Loglik, None)?);
        }
        all.extend(qs);
    }
    out.insert("mcq_accuracy".into(), evaluate_mcq(weights, &all, None, McqMode::Loglik, None)?);
    Ok(out)
}

fn save_checkpoint(path: &Path, weights: &TransformerWeights, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    weights.save(path)?;
    write(&state_path(path), &state.to_bytes(weights)?)
}

/// Pretrains the model, saving the scheduled checkpoints and `model.ckpt`.
/// With `resume`, training continues from that checkpoint and its `.state`
/// file and ends bit-identical to an uninterrupted run.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunRecord> {
    let mut rec = RunRecord::start(cfg, "train")?;
    let corpus = load_corpus(cfg)?;
    let model = cfg.model_config(&corpus);
    model.validate()?;
    let eos = corpus.tokenizer.eos_id();
    let mut trainer = match resume {
        Some(path) => {
            let weights = TransformerWeights::load(path)?;
            if weights.config != model {
                return Err(Error::Config(format!(
                    "{} does not match the configured model",
                    path.display()
                )));
            }
            let sp = state_path(path);
            let bytes = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
            let state = TrainState::from_bytes(&bytes, &weights)?;
            rec.labels.insert("resumed_from".into(), path.display().to_string());
            Trainer::new(weights, &corpus.stream, eos, cfg.train.clone(), Trainable::All)?.with_state(state)
        }
        None => {
            let weights = TransformerWeights::init(&model, cfg.train.seed)?;
            Trainer::new(weights, &corpus.stream, eos, cfg.train.clone(), Trainable::All)?
        }
    };
    let mut last_loss = f64::NAN;
    let mut written = Vec::new();
    trainer.run_until(cfg.train.steps, |step, loss, w, state| {
        last_loss = loss;
        if cfg.checkpoints.contains(&step) {
            let path = cfg.checkpoint_path(step);
            save_checkpoint(&path, w, state)?;
            written.push(path);
        }
        Ok(())
    })?;
    trainer.weights.save(cfg.model_path())?;
    rec.metrics.insert("steps".into(), trainer.state.step as f64);
    rec.metrics.insert("final_loss".into(), last_loss);
    rec.metrics.insert("params".into(), trainer.weights.param_count() as f64);
    rec.metrics.extend(tier_accuracy(&trainer.weights, &corpus)?);
    rec.artifacts.extend(written);
    rec.artifacts.push(cfg.model_path());
    rec.finish(cfg)
}

/// Saved checkpoints, ordered by step.
pub fn list_checkpoints(cfg: &ExperimentConfig) -> Result<Vec<(usize, PathBuf)>> {
    let dir = cfg.checkpoint_dir();
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(step) = step {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn probe_sets(corpus: &Corpus, concepts: &[usize], seed: u64) -> Result<Vec<ConceptProbeSet>> {
    concepts.iter().map(|&c| build_probe_set(corpus, c, seed)).collect()
}

/// Mean usable concept score per tier, keyed `pss.<tier>`.
pub fn tier_pss(sweep: &SweepResult, corpus: &Corpus) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for tier in Tier::ALL {
        let v: Vec<f64> = sweep
            .concepts
            .iter()
            .filter(|c| corpus.concept(c.concept).tier == tier)
            .filter_map(|c| c.pss)
            .collect();
        if !v.is_empty() {
            out.insert(format!("pss.{tier}"), v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    out
}

/// Writes `reports.csv`, `curve.csv` and `sweep.jsonl` into `dir`.
pub fn write_sweep(dir: &Path, sweep: &SweepResult) -> Result<Vec<PathBuf>> {
    let files = [dir.join("reports.csv"), dir.join("curve.csv"), dir.join("sweep.jsonl")];
    let mut bufs = [Vec::new(), Vec::new(), Vec::new()];
    sweep.reports_csv(&mut bufs[0])?;
    sweep.curve_csv(&mut bufs[1])?;
    sweep.jsonl(&mut bufs[2])?;
    for (f, b) in files.iter().zip(&bufs) {
        write(f, b)?;
    }
    Ok(files.to_vec())
}

/// Runs the mask-ratio sweep on the configured model, or on every saved
/// checkpoint. One record per model.
pub fn cmd_pss(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let corpus = load_corpus(cfg)?;
    let s = &cfg.surgery;
    let models: Vec<(Option<usize>, PathBuf)> = if s.all_checkpoints {
        list_checkpoints(cfg)?
            .into_iter()
            .map(|(step, p)| (Some(step), p))
            .collect()
    } else {
        vec![(None, s.checkpoint.clone().unwrap_or_else(|| cfg.model_path()))]
    };
    if models.is_empty() {
        return Err(Error::Usage("no checkpoints to sweep".into()));
    }
    let concepts = match &s.concepts {
        Some(c) => c.clone(),
        None => Tier::ALL.iter().flat_map(|&t| corpus.concepts_in(t)).collect(),
    };
    let sets = probe_sets(&corpus, &concepts, s.probe_seed)?;
    let ctx = SurgeryContext::new(s.options.clone(), &corpus.tokenizer)?;
    let mut records = Vec::new();
    for (step, path) in models {
        let mut rec = RunRecord::start(cfg, "pss")?;
        let weights = TransformerWeights::load(&path)?;
        let sweep = pss_sweep(&weights, &sets, &s.ratios, &ctx)?;
        let dir = match step {
            Some(step) => cfg.output_dir.join("pss").join(format!("step-{step:06}")),
            None => cfg.output_dir.join("pss"),
        };
        rec.artifacts = write_sweep(&dir, &sweep)?;
        rec.labels.insert("checkpoint".into(), path.display().to_string());
        if let Some(step) = step {
            rec.metrics.insert("step".into(), step as f64);
        }
        rec.metrics.insert("pss".into(), sweep.aggregate);
        rec.metrics.insert("d_model".into(), weights.config.d_model as f64);
        rec.metrics.insert("n_layers".into(), weights.config.n_layers as f64);
        rec.metrics.insert("params".into(), weights.param_count() as f64);
        rec.metrics.extend(tier_pss(&sweep, &corpus));
        rec.metrics.extend(tier_accuracy(&weights, &corpus)?);
        records.push(rec.finish(cfg)?);
    }
    Ok(records)
}

/// Outcome of one fine-tuning arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub variant: VariantKind,
    pub seed: u64,
    pub selected: usize,
    /// MCQ accuracy on the withheld facts.
    pub new_accuracy: f64,
    /// Aggregate score of the fine-tuned concepts over all their facts.
    pub new_pss: Option<f64>,
    /// MCQ accuracy on the pretrained facts afterwards.
    pub retained_accuracy: f64,
    pub checkpoint: PathBuf,
}

/// Fine-tunes one arm: selection, training on the new facts, evaluation.
pub fn finetune_arm(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    base: &TransformerWeights,
    kind: VariantKind,
    seed: u64,
) -> Result<(TransformerWeights, FinetuneOutcome)> {
    let f = &cfg.finetune;
    let targets = corpus.finetune_concepts();
    if targets.is_empty() {
        return Err(Error::Config("fine-tuning needs withheld facts (corpus.finetune_concepts)".into()));
    }
    let new_questions = corpus.withheld_questions();
    let target_questions: Vec<ProbeQuestion> = targets
        .iter()
        .flat_map(|&c| corpus.questions_for(c).into_iter().cloned())
        .collect();
    let sets: Vec<ConceptProbeSet> = probe_sets(corpus, &targets, cfg.surgery.probe_seed)?
        .into_iter()
        .map(|s| s.including_withheld(corpus))
        .collect();
    let mut irrelevant: Vec<ProbeQuestion> = Vec::new();
    for q in sets.iter().flat_map(|s| &s.irrelevant) {
        if !irrelevant.contains(q) {
            irrelevant.push(q.clone());
        }
    }
    let variant = FinetuneVariant {
        kind,
        ratio: f.ratio,
        seed,
        ranking: f.ranking,
        positions: f.positions,
    };
    let mask = select_ft_columns(base, &target_questions, &irrelevant, &variant)?;
    let stream = corpus.fact_stream(&targets, f.repetitions, seed)?;
    let train = TrainConfig { seed, ..f.train.clone() };
    let tuned = finetune(base, &stream, corpus.tokenizer.eos_id(), &mask, &train)?;
    let ctx = SurgeryContext::new(cfg.surgery.options.clone(), &corpus.tokenizer)?;
    let new_pss = pss_sweep(&tuned, &sets, &cfg.surgery.ratios, &ctx).ok().map(|s| s.aggregate);
    let checkpoint = cfg
        .output_dir
        .join("finetune")
        .join(format!("{kind}-seed{seed}.ckpt"));
    let outcome = FinetuneOutcome {
        variant: kind,
        seed,
        selected: (0..mask.n_layers()).map(|l| mask.count(l)).sum(),
        new_accuracy: evaluate_mcq(&tuned, &new_questions, None, McqMode::Loglik, None)?,
        new_pss,
        retained_accuracy: evaluate_mcq(&tuned, &corpus.known_questions(), None, McqMode::Loglik, None)?,
        checkpoint,
    };
    Ok((tuned, outcome))
}

pub fn finetune_csv(outcomes: &[FinetuneOutcome]) -> String {
    let mut out = String::from("variant,seed,selected,new_accuracy,new_pss,retained_accuracy\n");
    for o in outcomes {
        let pss = o.new_pss.map_or(String::new(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            o.variant, o.seed, o.selected, o.new_accuracy, pss, o.retained_accuracy
        );
    }
    out
}

/// Fine-tunes every configured variant and seed on the concepts with
/// withheld facts.
pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<(Vec<FinetuneOutcome>, Vec<RunRecord>)> {
    let corpus = load_corpus(cfg)?;
    let base_path = cfg.finetune.base_checkpoint.clone().unwrap_or_else(|| cfg.model_path());
    let base = TransformerWeights::load(&base_path)?;
    let mut outcomes = Vec::new();
    let mut records = Vec::new();
    for &kind in &cfg.finetune.variants {
        for &seed in &cfg.finetune.seeds {
            let mut rec = RunRecord::start(cfg, "finetune")?;
            let (tuned, o) = finetune_arm(cfg, &corpus, &base, kind, seed)?;
            if let Some(dir) = o.checkpoint.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            tuned.save(&o.checkpoint)?;
            rec.labels.insert("variant".into(), kind.to_string());
            rec.labels.insert("base".into(), base_path.display().to_string());
            rec.metrics.insert("seed".into(), seed as f64);
            rec.metrics.insert("selected".into(), o.selected as f64);
            rec.metrics.insert("new_accuracy".into(), o.new_accuracy);
            if let Some(p) = o.new_pss {
                rec.metrics.insert("new_pss".into(), p);
            }
            rec.metrics.insert("retained_accuracy".into(), o.retained_accuracy);
            rec.artifacts.push(o.checkpoint.clone());
            records.push(rec.finish(cfg)?);
            outcomes.push(o);
        }
    }
    write(&cfg.output_dir.join("finetune").join("finetune.csv"), finetune_csv(&outcomes).as_bytes())?;
    Ok((outcomes, records))
}

/// Semantic entropy and LID per question, written to `hallucination.csv`.
pub fn cmd_hallucination(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut rec = RunRecord::start(cfg, "hallucination")?;
    let corpus = load_corpus(cfg)?;
    let h = &cfg.hallucination;
    let path = h.checkpoint.clone().unwrap_or_else(|| cfg.model_path());
    let weights = TransformerWeights::load(&path)?;
    let mut questions = match h.questions {
        QuestionSource::Trained => corpus.known_questions(),
        QuestionSource::Withheld => corpus.withheld_questions(),
    };
    if let Some(max) = h.max_questions {
        questions.truncate(max);
    }
    let report = hallucination_metrics(&weights, &corpus.tokenizer, &questions, &h.options)?;
    let out = cfg.output_dir.join("hallucination.csv");
    write(&out, report.csv().as_bytes())?;
    rec.labels.insert("checkpoint".into(), path.display().to_string());
    rec.metrics.insert("semantic_entropy".into(), report.mean_semantic_entropy);
    rec.metrics.insert("lid".into(), report.lid);
    rec.metrics.insert("greedy_accuracy".into(), report.accuracy);
    rec.artifacts.push(out);
    rec.finish(cfg)
}

/// Correlations across models plus per-tier and per-checkpoint tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// `(label, pss, mcq_accuracy)` of each swept model.
    pub points: Vec<(String, f64, f64)>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub notice: Option<String>,
    /// `(label, tier, pss)`.
    pub tiers: Vec<(String, String, f64)>,
    /// `(config hash, step, pss, mcq_accuracy)`.
    pub checkpoints: Vec<(String, usize, f64, f64)>,
}

/// Builds the report from the `pss` records of one or more results logs.
pub fn cmd_report(logs: &[PathBuf]) -> Result<Report> {
    let mut records = Vec::new();
    for path in logs {
        records.extend(read_records(path)?);
    }
    let pss: Vec<&RunRecord> = records.iter().filter(|r| r.command == "pss").collect();
    let mut points = Vec::new();
    let mut tiers = Vec::new();
    let mut checkpoints = Vec::new();
    for r in &pss {
        let label = r.labels.get("checkpoint").cloned().unwrap_or_default();
        let (Some(&p), Some(&a)) = (r.metrics.get("pss"), r.metrics.get("mcq_accuracy")) else {
            continue;
        };
        match r.metrics.get("step") {
            Some(&step) => checkpoints.push((r.config_hash.clone(), step as usize, p, a)),
            None => points.push((label.clone(), p, a)),
        }
        for tier in Tier::ALL {
            if let Some(&v) = r.metrics.get(&format!("pss.{tier}")) {
                tiers.push((label.clone(), tier.to_string(), v));
            }
        }
    }
    checkpoints.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let (pearson, spearman, notice) = if points.len() < 3 {
        (None, None, Some(format!("correlation omitted: {} models, need at least 3", points.len())))
    } else {
        let (p, s) = (pearson(&xs, &ys), spearman(&xs, &ys));
        let notice = p.is_none().then(|| "correlation undefined: a column is constant".to_string());
        (p, s, notice)
    };
    Ok(Report {
        points,
        pearson,
        spearman,
        notice,
        tiers,
        checkpoints,
    })
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "models: {}", self.points.len());
        let _ = writeln!(out, "pearson(pss, accuracy): {}", fmt(self.pearson));
        let _ = writeln!(out, "spearman(pss, accuracy): {}", fmt(self.spearman));
        if let Some(n) = &self.notice {
            let _ = writeln!(out, "note: {n}");
        }
        let _ = writeln!(out, "\nmodel,pss,mcq_accuracy");
        for (l, p, a) in &self.points {
            let _ = writeln!(out, "{l},{p:.6},{a:.6}");
        }
        let _ = writeln!(out, "\nmodel,tier,pss");
        for (l, t, p) in &self.tiers {
            let _ = writeln!(out, "{l},{t},{p:.6}");
        }
        let _ = writeln!(out, "\nconfig,step,pss,mcq_accuracy");
        for (h, s, p, a) in &self.checkpoints {
            let _ = writeln!(out, "{},{s},{p:.6},{a:.6}", &h[..h.len().min(12)]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::from_toml("[train]\nstepz = 3\n").unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = ExperimentConfig {
            train: TrainConfig { seed: 9, ..a.train.clone() },
            ..a.clone()
        };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn bad_checkpoint_step_rejected() {
        let cfg = ExperimentConfig {
            checkpoints: vec![0],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
