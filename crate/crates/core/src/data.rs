//! Records, label catalogs, tokenization, batching and train/validation splits.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Vocab, PAD_ID};
use crate::error::{LerpError, Result};

/// Default cap on note length; longer notes lose their tail.
pub const DEFAULT_MAX_NOTE_LEN: usize = 256;

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// One admission: a tokenized note, tokenized event names and a label vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EhrRecord {
    pub id: String,
    pub note: Vec<String>,
    pub events: Vec<Vec<String>>,
    pub labels: Vec<u8>,
}

/// On-disk form of a record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    note: String,
    events: Vec<String>,
    labels: Vec<u8>,
}

/// Ordered risk-label names, shared by every record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelCatalog {
    names: Vec<String>,
}

impl LabelCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(LerpError::Data("label catalog is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if tokenize(name).is_empty() {
                return Err(LerpError::Data(format!(
                    "label name {name:?} has no tokens"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(LerpError::Data(format!("duplicate label name {name:?}")));
            }
        }
        Ok(LabelCatalog { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn tokens(&self) -> Vec<Vec<String>> {
        self.names.iter().map(|n| tokenize(n)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.names).expect("strings serialize")
    }
}

/// Parses a catalog file: a JSON array of label-name strings.
pub fn parse_catalog(text: &str) -> Result<LabelCatalog> {
    let names: Vec<String> = serde_json::from_str(text)
        .map_err(|e| LerpError::parse(e.line(), format!("catalog: {e}")))?;
    LabelCatalog::new(names)
}

pub fn load_catalog(path: &Path) -> Result<LabelCatalog> {
    parse_catalog(&read_text(path)?)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        LerpError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Parses one record per non-blank line and validates it against `n_labels`.
pub fn parse_dataset(text: &str, n_labels: usize) -> Result<Vec<EhrRecord>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(line)
            .map_err(|e| LerpError::parse(line_no, format!("malformed record: {e}")))?;
        let record = validate_record(raw, n_labels).map_err(|m| LerpError::parse(line_no, m))?;
        records.push(record);
    }
    Ok(records)
}

fn validate_record(raw: RecordLine, n_labels: usize) -> std::result::Result<EhrRecord, String> {
    let id = raw.id;
    if raw.labels.len() != n_labels {
        return Err(format!(
            "record {id:?} has {} labels, catalog has {n_labels}",
            raw.labels.len()
        ));
    }
    if raw.labels.iter().any(|&b| b > 1) {
        return Err(format!("record {id:?} has a label outside {{0,1}}"));
    }
    let note = tokenize(&raw.note);
    if note.is_empty() {
        return Err(format!("record {id:?} has an empty note"));
    }
    let mut events = Vec::with_capacity(raw.events.len());
    for e in &raw.events {
        let toks = tokenize(e);
        if toks.is_empty() {
            return Err(format!("record {id:?} has an event with no tokens: {e:?}"));
        }
        events.push(toks);
    }
    Ok(EhrRecord {
        id,
        note,
        events,
        labels: raw.labels,
    })
}

pub fn load_dataset(path: &Path, catalog: &LabelCatalog) -> Result<Vec<EhrRecord>> {
    parse_dataset(&read_text(path)?, catalog.len())
}

/// Serializes records in the line-oriented JSON format.
pub fn format_dataset(records: &[EhrRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            note: r.note.join(" "),
            events: r.events.iter().map(|e| e.join(" ")).collect(),
            labels: r.labels.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, records: &[EhrRecord]) -> Result<()> {
    std::fs::write(path, format_dataset(records))?;
    Ok(())
}

/// Deterministic shuffled split; `fraction` of the records go to training.
pub fn split(
    records: &[EhrRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<EhrRecord>, Vec<EhrRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(LerpError::Config(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    if records.len() < 2 {
        return Err(LerpError::Data(format!(
            "cannot split {} record(s) into train and validation",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((records.len() as f64 * fraction).round() as usize).clamp(1, records.len() - 1);
    let train = order[..n_train]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let val = order[n_train..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok((train, val))
}

/// Vocabulary over catalog names, then record notes and events, in order of
/// first appearance.
pub fn build_vocab(records: &[EhrRecord], catalog: &LabelCatalog) -> Vocab {
    let mut vocab = Vocab::new();
    for name in catalog.tokens() {
        for t in &name {
            vocab.insert(t);
        }
    }
    for r in records {
        for t in r.note.iter().chain(r.events.iter().flatten()) {
            vocab.insert(t);
        }
    }
    vocab
}

/// A record mapped to token IDs, note truncated to the length cap.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRecord {
    pub id: String,
    pub note: Vec<usize>,
    pub events: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

pub fn encode_record(record: &EhrRecord, vocab: &Vocab, max_note_len: usize) -> EncodedRecord {
    let keep = record.note.len().min(max_note_len);
    EncodedRecord {
        id: record.id.clone(),
        note: vocab.ids(&record.note[..keep]),
        events: record.events.iter().map(|e| vocab.ids(e)).collect(),
        labels: record.labels.iter().map(|&b| f64::from(b)).collect(),
    }
}

/// Tokenized label names as ID lists.
pub fn encode_catalog(catalog: &LabelCatalog, vocab: &Vocab) -> Vec<Vec<usize>> {
    catalog.tokens().iter().map(|t| vocab.ids(t)).collect()
}

/// Records padded to a common note length.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `B × N_M` token IDs, right-padded with [`PAD_ID`].
    pub notes: Vec<Vec<usize>>,
    /// `true` marks a padding position.
    pub pad_masks: Vec<Vec<bool>>,
    pub events: Vec<Vec<Vec<usize>>>,
    /// `B × N_Y` targets.
    pub labels: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

impl Batch {
    /// Pads to `min(longest note, max_note_len)`.
    pub fn new(records: &[&EncodedRecord], max_note_len: usize) -> Self {
        let width = records
            .iter()
            .map(|r| r.note.len())
            .max()
            .unwrap_or(0)
            .min(max_note_len);
        let mut notes = Vec::with_capacity(records.len());
        let mut pad_masks = Vec::with_capacity(records.len());
        for r in records {
            let mut row: Vec<usize> = r.note.iter().copied().take(width).collect();
            row.resize(width, PAD_ID);
            pad_masks.push(row.iter().map(|&t| t == PAD_ID).collect());
            notes.push(row);
        }
        Batch {
            notes,
            pad_masks,
            events: records.iter().map(|r| r.events.clone()).collect(),
            labels: records.iter().map(|r| r.labels.clone()).collect(),
            ids: records.iter().map(|r| r.id.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn note_len(&self) -> usize {
        self.notes.first().map_or(0, Vec::len)
    }

    /// Row `i` as an encoded record (note padded to the batch width).
    pub fn record(&self, i: usize) -> EncodedRecord {
        EncodedRecord {
            id: self.ids[i].clone(),
            note: self.notes[i].clone(),
            events: self.events[i].clone(),
            labels: self.labels[i].clone(),
        }
    }
}
