//! Token vocabulary and static embedding tables.
//!
//! Notes are embedded one column per token; multi-token entities (event
//! names, risk-label names) are embedded as the mean of their token rows.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LerpError, Result};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bijection between token strings and integer IDs. IDs 0 and 1 are
/// reserved for padding and unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    /// A vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.tokens.push(PAD_TOKEN.to_string());
        v.tokens.push(UNK_TOKEN.to_string());
        v.index.insert(PAD_TOKEN.to_string(), PAD_ID);
        v.index.insert(UNK_TOKEN.to_string(), UNK_ID);
        v
    }

    /// Adds `token` if unseen; returns its ID either way.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// ID of `token`, or [`UNK_ID`] when unseen.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = LerpError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(LerpError::Data(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut v = Vocab::new();
        for t in &tokens[2..] {
            if v.contains(t) {
                return Err(LerpError::Data(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(t);
        }
        Ok(v)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// `|V| × D` matrix of token vectors. Row [`PAD_ID`] is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    weights: Tensor,
    trainable: bool,
}

impl EmbeddingTable {
    /// Gaussian rows with mean 0 and std `1/sqrt(dim)`; padding row zero.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 {
            return Err(LerpError::Config(
                "embedding dimension must be positive".into(),
            ));
        }
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut data: Vec<f64> = (0..vocab_size * dim).map(|_| normal.sample(rng)).collect();
        let pad_row = dim.min(data.len());
        data[..pad_row].fill(0.0);
        Ok(EmbeddingTable {
            weights: Tensor::new(vec![vocab_size, dim], data)?,
            trainable: true,
        })
    }

    pub fn from_tensor(weights: Tensor, trainable: bool) -> Result<Self> {
        let (v, d) = weights.dims2()?;
        if d == 0 {
            return Err(LerpError::Config(
                "embedding dimension must be positive".into(),
            ));
        }
        if v == 0 || weights.data()[..d].iter().any(|&x| x != 0.0) {
            return Err(LerpError::Data(
                "embedding padding row must exist and be zero".into(),
            ));
        }
        Ok(EmbeddingTable { weights, trainable })
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn row(&self, id: usize) -> &[f64] {
        let d = self.dim();
        &self.weights.data()[id * d..(id + 1) * d]
    }
}

/// Column `n` is the table row of `tokens[n]`.
pub fn embed_note(table: &EmbeddingTable, tokens: &[usize]) -> Result<Tensor> {
    let (v, d) = (table.vocab_size(), table.dim());
    let n = tokens.len();
    let mut out = vec![0.0; d * n];
    for (col, &id) in tokens.iter().enumerate() {
        if id >= v {
            return Err(LerpError::Data(format!(
                "token id {id} at position {col} out of range for vocabulary of {v}"
            )));
        }
        for (k, &x) in table.row(id).iter().enumerate() {
            out[k * n + col] = x;
        }
    }
    Tensor::new(vec![d, n], out)
}

/// Drops padding IDs from an entity, failing if nothing remains.
pub fn entity_ids(entity: &[usize]) -> Result<Vec<usize>> {
    let ids: Vec<usize> = entity.iter().copied().filter(|&id| id != PAD_ID).collect();
    if ids.is_empty() {
        return Err(LerpError::Data(
            "entity has no tokens after dropping padding".into(),
        ));
    }
    Ok(ids)
}

/// Column `i` is the mean of entity `i`'s token rows.
pub fn embed_entities(table: &EmbeddingTable, entities: &[Vec<usize>]) -> Result<Tensor> {
    let (v, d) = (table.vocab_size(), table.dim());
    let n = entities.len();
    let mut out = vec![0.0; d * n];
    for (col, entity) in entities.iter().enumerate() {
        let ids =
            entity_ids(entity).map_err(|_| LerpError::Data(format!("entity {col} is empty")))?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(LerpError::Data(format!(
                "entity {col}: token id {bad} out of range"
            )));
        }
        for k in 0..d {
            let s: f64 = ids.iter().map(|&id| table.row(id)[k]).sum();
            out[k * n + col] = s / ids.len() as f64;
        }
    }
    Tensor::new(vec![d, n], out)
}

/// Parses the word-vector text format: a `<count> <dim>` header, then one
/// `<token> <v1> ... <vD>` line per token. An optional `<unk>` line sets the
/// unknown-token row, which is otherwise zero. The table comes back frozen.
pub fn parse_pretrained(text: &str) -> Result<(Vocab, EmbeddingTable)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| LerpError::parse(1, "empty embedding file"))?;
    let mut parts = header.split_whitespace();
    let mut field = |name: &str| -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| LerpError::parse(1, format!("header is missing {name}")))?
            .parse()
            .map_err(|_| LerpError::parse(1, format!("header {name} is not an integer")))
    };
    let count = field("count")?;
    let dim = field("dimension")?;
    if parts.next().is_some() {
        return Err(LerpError::parse(1, "header has extra fields"));
    }
    if dim == 0 {
        return Err(LerpError::parse(1, "dimension must be positive"));
    }

    let mut vocab = Vocab::new();
    let mut data = vec![0.0; 2 * dim];
    let mut seen = 0usize;
    let mut unk_seen = false;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-blank line");
        let is_unk = token == UNK_TOKEN && !unk_seen;
        if !is_unk && vocab.contains(token) {
            return Err(LerpError::parse(
                line_no,
                format!("duplicate token {token:?}"),
            ));
        }
        let start = data.len();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| LerpError::parse(line_no, format!("invalid number {p:?}")))?;
            if !v.is_finite() {
                return Err(LerpError::parse(line_no, format!("non-finite value {p:?}")));
            }
            data.push(v);
        }
        let got = data.len() - start;
        if got != dim {
            return Err(LerpError::parse(
                line_no,
                format!("token {token:?} has {got} values, expected {dim}"),
            ));
        }
        if is_unk {
            let row: Vec<f64> = data.drain(start..).collect();
            data[UNK_ID * dim..(UNK_ID + 1) * dim].copy_from_slice(&row);
            unk_seen = true;
        } else {
            vocab.insert(token);
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(LerpError::parse(2, "no vectors after header"));
    }
    if seen != count {
        return Err(LerpError::parse(
            1,
            format!("header declares {count} vectors, file has {seen}"),
        ));
    }
    let weights = Tensor::new(vec![vocab.len(), dim], data)?;
    Ok((vocab, EmbeddingTable::from_tensor(weights, false)?))
}

pub fn load_pretrained(path: &Path) -> Result<(Vocab, EmbeddingTable)> {
    let text = std::fs::read_to_string(path)?;
    parse_pretrained(&text)
}

/// Inverse of [`parse_pretrained`]; the padding row is not written.
/// Values use Rust's shortest round-trip formatting, so reloading is exact.
pub fn format_pretrained(vocab: &Vocab, table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", vocab.len() - 1, table.dim());
    for (id, token) in vocab.tokens().iter().enumerate().skip(1) {
        out.push_str(token);
        for v in table.row(id) {
            write!(out, " {v:?}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn save_pretrained(path: &Path, vocab: &Vocab, table: &EmbeddingTable) -> Result<()> {
    std::fs::write(path, format_pretrained(vocab, table))?;
    Ok(())
}
