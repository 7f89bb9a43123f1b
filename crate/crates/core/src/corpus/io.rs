//! On-disk corpus layout, one directory:
//!
//! * `meta.json`      `{"config": CorpusConfig, "vocab": [word, ...]}`
//! * `concepts.jsonl` one [`Concept`] per line
//! * `facts.jsonl`    one `{concept, name, tier, relation, value, occurrences}` per line
//! * `probes.jsonl`   one probe per line, tokens rendered as text
//! * `train.bin`      token stream: magic `PSPECTOK`, u32 version, u32 vocab
//!   size, u64 token count, then u32 ids (all little-endian)

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::relations::RELATIONS;
use super::{Concept, Corpus, CorpusConfig, ProbeKind, ProbeQuestion, Tier, Tokenizer};
use crate::error::{Error, Result};

pub const STREAM_MAGIC: &[u8; 8] = b"PSPECTOK";
const STREAM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: CorpusConfig,
    vocab: Tokenizer,
}

#[derive(Serialize, Deserialize)]
struct FactRecord<'a> {
    concept: usize,
    name: &'a str,
    tier: Tier,
    withheld: bool,
    relation: &'a str,
    value: &'a str,
    occurrences: usize,
}

#[derive(Serialize, Deserialize)]
struct ProbeRecord {
    concept: usize,
    relation: usize,
    kind: ProbeKind,
    prompt: String,
    answer: String,
    options: Vec<String>,
    gold_option: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn encode_stream(stream: &[u32], vocab_size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + stream.len() * 4);
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for &t in stream {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn decode_stream(buf: &[u8]) -> Result<(Vec<u32>, usize)> {
    if buf.len() < 24 || &buf[..8] != STREAM_MAGIC {
        return Err(Error::Format("token stream: bad header".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("token stream: unsupported version {version}")));
    }
    let vocab = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
    let body = &buf[24..];
    if body.len() != n * 4 {
        return Err(Error::Format(format!("token stream: expected {n} tokens")));
    }
    let stream: Vec<u32> = body
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if let Some(bad) = stream.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Format(format!("token stream: id {bad} >= vocab {vocab}")));
    }
    Ok((stream, vocab))
}

impl Corpus {
    /// Writes the corpus files into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Meta {
            config: self.config.clone(),
            vocab: self.tokenizer.clone(),
        };
        let mut meta_bytes = serde_json::to_vec_pretty(&meta)?;
        meta_bytes.push(b'\n');
        write_file(&dir.join("meta.json"), &meta_bytes)?;
        write_file(&dir.join("concepts.jsonl"), &jsonl(&self.concepts)?)?;

        let facts: Vec<FactRecord<'_>> = self
            .concepts
            .iter()
            .flat_map(|c| {
                let reps = self.config.repetitions[c.tier.index()];
                c.attributes.iter().map(move |a| FactRecord {
                    concept: c.id,
                    name: &c.name,
                    tier: c.tier,
                    withheld: a.withheld,
                    relation: RELATIONS[a.relation].noun,
                    value: &a.value,
                    occurrences: if a.withheld { 0 } else { reps },
                })
            })
            .collect();
        write_file(&dir.join("facts.jsonl"), &jsonl(facts)?)?;

        let tk = &self.tokenizer;
        let probes = self
            .questions
            .iter()
            .map(|q| {
                Ok(ProbeRecord {
                    concept: q.concept,
                    relation: q.relation,
                    kind: q.kind,
                    prompt: tk.detokenize(&q.prompt)?,
                    answer: tk.detokenize(&q.answer)?,
                    options: q.options.iter().map(|o| tk.detokenize(o)).collect::<Result<_>>()?,
                    gold_option: q.gold_option,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_file(&dir.join("probes.jsonl"), &jsonl(probes)?)?;
        write_file(&dir.join("train.bin"), &encode_stream(&self.stream, tk.vocab_size()))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Meta = serde_json::from_slice(&read_file(&dir.join("meta.json"))?)?;
        let concepts = String::from_utf8_lossy(&read_file(&dir.join("concepts.jsonl"))?)
            .lines()
            .map(|l| serde_json::from_str::<Concept>(l).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        let tk = meta.vocab;
        let questions = String::from_utf8_lossy(&read_file(&dir.join("probes.jsonl"))?)
            .lines()
            .map(|l| {
                let r: ProbeRecord = serde_json::from_str(l)?;
                Ok(ProbeQuestion {
                    concept: r.concept,
                    relation: r.relation,
                    kind: r.kind,
                    prompt: tk.tokenize(&r.prompt)?,
                    answer: tk.tokenize(&r.answer)?,
                    options: r.options.iter().map(|o| tk.tokenize(o)).collect::<Result<_>>()?,
                    gold_option: r.gold_option,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (stream, vocab) = decode_stream(&read_file(&dir.join("train.bin"))?)?;
        if vocab != tk.vocab_size() {
            return Err(Error::Format(format!(
                "train.bin vocab {vocab} disagrees with meta.json vocab {}",
                tk.vocab_size()
            )));
        }
        Ok(Corpus {
            config: meta.config,
            tokenizer: tk,
            concepts,
            questions,
            stream,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_concepts: 18,
            repetitions: [4, 2, 1],
            finetune_concepts: 2,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        corpus.save(dir.path()).unwrap();
        assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn stream_header_checked() {
        let bytes = encode_stream(&[0, 1, 2], 3);
        assert_eq!(decode_stream(&bytes).unwrap(), (vec![0, 1, 2], 3));
        let bad = encode_stream(&[0, 5], 3);
        assert!(decode_stream(&bad).is_err());
        assert!(decode_stream(&bytes[..20]).is_err());
    }
}
