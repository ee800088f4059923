//! Binary checkpoints for models and resumable training state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LERPCKPT"            8-byte magic
//! version: u32          currently 1
//! header_len: u64
//! header: JSON          kind, model config, vocabulary, label names,
//!                       tensor names and shapes, training counters
//! data: f64 × n         every tensor's values in header order
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so save→load is bit-exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelCatalog;
use crate::embedding::{EmbeddingTable, Vocab};
use crate::error::{LerpError, Result};
use crate::model::{Model, ModelConfig, ModelParams, EMBEDDINGS_NAME};
use crate::tensor::Tensor;
use crate::training::{OptimizerState, TrainState};

pub const MAGIC: &[u8; 8] = b"LERPCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Model,
    TrainState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainHeader {
    epoch: usize,
    best_val_loss_bits: u64,
    /// 0 for SGD.
    adam_step: Option<u64>,
    rng_seed: Vec<u8>,
    rng_stream: u64,
    rng_word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: Kind,
    config: ModelConfig,
    vocab: Vocab,
    labels: Vec<String>,
    trainable_embeddings: bool,
    tensors: Vec<TensorHeader>,
    train: Option<TrainHeader>,
}

fn err(msg: impl Into<String>) -> LerpError {
    LerpError::Checkpoint(msg.into())
}

fn encode(header: &Header, tensors: &[&Tensor]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let values: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>)> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| err("bad magic"))?;
    let (version, rest) = split_array::<4>(rest)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let (len, rest) = split_array::<8>(rest)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| err("header too large"))?;
    if len > rest.len() {
        return Err(err("truncated header"));
    }
    let (json, data) = rest.split_at(len);
    let header: Header = serde_json::from_slice(json).map_err(|e| err(format!("header: {e}")))?;

    let mut total: usize = 0;
    for t in &header.tensors {
        let n = t
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| err(format!("tensor {} is too large", t.name)))?;
        total = total
            .checked_add(n)
            .ok_or_else(|| err("tensor sizes overflow"))?;
    }
    if total.checked_mul(8) != Some(data.len()) {
        return Err(err(format!(
            "data section holds {} bytes, header describes {} values",
            data.len(),
            total
        )));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let vals: Vec<f64> = values.by_ref().take(n).collect();
        tensors.push((t.name.clone(), Tensor::new(t.shape.clone(), vals)?));
    }
    Ok((header, tensors))
}

fn split_array<const N: usize>(bytes: &[u8]) -> Result<([u8; N], &[u8])> {
    if bytes.len() < N {
        return Err(err("truncated checkpoint"));
    }
    let (head, tail) = bytes.split_at(N);
    Ok((head.try_into().expect("length checked"), tail))
}

fn model_header(model: &Model, kind: Kind, extra: &[(String, &Tensor)]) -> (Header, Vec<Tensor>) {
    let mut named: Vec<(String, Tensor)> = vec![(
        EMBEDDINGS_NAME.to_string(),
        model.embeddings.weights().clone(),
    )];
    named.extend(
        model
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone())),
    );
    named.extend(extra.iter().map(|(n, t)| (n.clone(), (*t).clone())));
    let header = Header {
        kind,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        labels: model.catalog.names().to_vec(),
        trainable_embeddings: model.embeddings.is_trainable(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorHeader {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        train: None,
    };
    (header, named.into_iter().map(|(_, t)| t).collect())
}

fn model_from(header: &Header, tensors: &mut Vec<(String, Tensor)>) -> Result<Model> {
    header.config.validate()?;
    let pos = tensors
        .iter()
        .position(|(n, _)| n == EMBEDDINGS_NAME)
        .ok_or_else(|| err("missing embeddings"))?;
    let (_, table) = tensors.remove(pos);
    let embeddings = EmbeddingTable::from_tensor(table, header.trainable_embeddings)?;
    if !embeddings.weights().is_finite() {
        return Err(err("embeddings contain non-finite values"));
    }
    let catalog = LabelCatalog::new(header.labels.clone())?;
    let n_params = ModelParams::shapes(&header.config).len();
    if tensors.len() < n_params {
        return Err(err("missing parameter tensors"));
    }
    let param_tensors: Vec<(String, Tensor)> = tensors.drain(..n_params).collect();
    let params = ModelParams::from_named(&header.config, param_tensors)?;
    Model::from_parts(
        header.config.clone(),
        header.vocab.clone(),
        embeddings,
        catalog,
        params,
    )
}

/// Serializes a model.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let (header, tensors) = model_header(model, Kind::Model, &[]);
    encode(&header, &tensors.iter().collect::<Vec<_>>())
}

/// Parses a model checkpoint. Never panics on malformed input.
pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let (header, mut tensors) = decode(bytes)?;
    if header.kind != Kind::Model {
        return Err(err("not a model checkpoint"));
    }
    let model = model_from(&header, &mut tensors)?;
    if !tensors.is_empty() {
        return Err(err("unexpected extra tensors"));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}

/// Serializes a training state (model, optimizer moments, counters, RNG).
pub fn encode_train_state(state: &TrainState) -> Vec<u8> {
    let names: Vec<&str> = state.model.parameters().iter().map(|(n, _)| *n).collect();
    let mut extra: Vec<(String, &Tensor)> = Vec::new();
    let adam_step = match &state.optimizer {
        OptimizerState::Sgd => None,
        OptimizerState::Adam {
            step,
            first,
            second,
        } => {
            for (n, t) in names.iter().zip(first) {
                extra.push((format!("adam.first.{n}"), t));
            }
            for (n, t) in names.iter().zip(second) {
                extra.push((format!("adam.second.{n}"), t));
            }
            Some(*step)
        }
    };
    let (mut header, tensors) = model_header(&state.model, Kind::TrainState, &extra);
    header.train = Some(TrainHeader {
        epoch: state.epoch,
        best_val_loss_bits: state.best_val_loss.to_bits(),
        adam_step,
        rng_seed: state.rng.get_seed().to_vec(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
    });
    encode(&header, &tensors.iter().collect::<Vec<_>>())
}

pub fn decode_train_state(bytes: &[u8]) -> Result<TrainState> {
    let (header, mut tensors) = decode(bytes)?;
    if header.kind != Kind::TrainState {
        return Err(err("not a training-state checkpoint"));
    }
    let train = header
        .train
        .as_ref()
        .ok_or_else(|| err("missing training header"))?;
    let model = model_from(&header, &mut tensors)?;
    let params = model.parameters();
    let optimizer = match train.adam_step {
        None => OptimizerState::Sgd,
        Some(step) => {
            if tensors.len() != 2 * params.len() {
                return Err(err("optimizer moments do not match parameters"));
            }
            let second: Vec<(String, Tensor)> = tensors.split_off(params.len());
            let first = std::mem::take(&mut tensors);
            let check = |prefix: &str, moments: Vec<(String, Tensor)>| -> Result<Vec<Tensor>> {
                moments
                    .into_iter()
                    .zip(&params)
                    .map(|((n, t), (pn, pt))| {
                        if n != format!("{prefix}.{pn}") || t.shape() != pt.shape() {
                            return Err(err(format!("unexpected optimizer tensor {n}")));
                        }
                        Ok(t)
                    })
                    .collect()
            };
            OptimizerState::Adam {
                step,
                first: check("adam.first", first)?,
                second: check("adam.second", second)?,
            }
        }
    };
    if !tensors.is_empty() {
        return Err(err("unexpected extra tensors"));
    }
    let seed: [u8; 32] = train
        .rng_seed
        .as_slice()
        .try_into()
        .map_err(|_| err("rng seed must be 32 bytes"))?;
    let word_pos: u128 = train
        .rng_word_pos
        .parse()
        .map_err(|_| err("invalid rng word position"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(train.rng_stream);
    rng.set_word_pos(word_pos);
    drop(params);
    Ok(TrainState {
        model,
        optimizer,
        epoch: train.epoch,
        best_val_loss: f64::from_bits(train.best_val_loss_bits),
        rng,
    })
}

pub fn save_train_state(path: &Path, state: &TrainState) -> Result<()> {
    std::fs::write(path, encode_train_state(state))?;
    Ok(())
}

pub fn load_train_state(path: &Path) -> Result<TrainState> {
    decode_train_state(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn model(variant: Variant) -> Model {
        let catalog =
            LabelCatalog::new(vec!["a risk".into(), "b risk".into(), "c risk".into()]).unwrap();
        let mut vocab = Vocab::new();
        for t in ["a", "b", "c", "risk", "note"] {
            vocab.insert(t);
        }
        let mut cfg = ModelConfig::new(variant, 3);
        cfg.embed_dim = 5;
        cfg.proj_dim = 3;
        cfg.hidden_dim = 4;
        Model::init(cfg, vocab, catalog, None).unwrap()
    }

    #[test]
    fn model_round_trips_bit_exactly() {
        for v in [Variant::Lerp, Variant::LerpMinus, Variant::Ts] {
            let m = model(v);
            let bytes = encode_model(&m);
            let back = decode_model(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_model(&back), bytes);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let bytes = encode_model(&model(Variant::Lerp));
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_model(&bytes[..10]).is_err());
        assert!(decode_model(b"").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_model(&bad).is_err());
        let mut extra = bytes;
        extra.extend_from_slice(&[0; 8]);
        assert!(decode_model(&extra).is_err());
    }

    #[test]
    fn model_checkpoint_is_not_a_train_state() {
        let bytes = encode_model(&model(Variant::Ts));
        assert!(decode_train_state(&bytes).is_err());
    }
}
