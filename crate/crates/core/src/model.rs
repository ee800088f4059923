//! The cross-attention risk model and its two ablations.
//!
//! For a note embedding `Em: D×N_M` and an entity embedding `Ex: D×N_X`
//! (clinical events or risk-label names), one attention branch computes
//!
//! 1. `G = f₁(Em)ᵀ · f₁(Ex) / √F`, an `N_M×N_X` similarity matrix;
//! 2. `u = pool_k2(max_channels(ReLU(conv_k1(Gᵀ))))`, one score per word;
//! 3. `α = softmax(u)` over non-padding words and `z = Em · α`.
//!
//! The full model runs an event branch and a label branch and classifies
//! `sigmoid(f₃(f₁′(f₂(z_E ⊕ z_Y))))`. [`Variant::LerpMinus`] drops the event
//! branch and feeds `z_Y ⊕ z_Y`; [`Variant::Ts`] scores words by their mean
//! scaled-dot similarity to the other words of the note.
//!
//! Padding positions are zeroed before the convolution and excluded from
//! both pools, which makes trailing padding indistinguishable from the
//! zero padding at the sequence edge.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, PoolSpec, Tape, Var};
use crate::data::{encode_catalog, encode_record, EhrRecord, EncodedRecord, LabelCatalog};
use crate::embedding::{embed_entities, embed_note, entity_ids, EmbeddingTable, Vocab, PAD_ID};
use crate::error::{LerpError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Event-guided and label-dependent branches.
    Lerp,
    /// Label-dependent branch only.
    LerpMinus,
    /// Self-attention over the note, no external entities.
    Ts,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lerp => "lerp",
            Variant::LerpMinus => "lerp-minus",
            Variant::Ts => "ts",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = LerpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lerp" => Ok(Variant::Lerp),
            "lerp-minus" => Ok(Variant::LerpMinus),
            "ts" => Ok(Variant::Ts),
            other => Err(LerpError::Config(format!(
                "unknown variant {other:?} (expected lerp, lerp-minus or ts)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding size `D`.
    pub embed_dim: usize,
    /// Projected size `F`.
    pub proj_dim: usize,
    /// Convolution width `k1` (odd).
    pub conv_width: usize,
    /// Word-axis max-pool window `k2`.
    pub pool_width: usize,
    /// Fusion hidden size `H`.
    pub hidden_dim: usize,
    pub n_labels: usize,
    pub max_note_len: usize,
    /// Seeds parameter (and random embedding) initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: D=64, F=32, k1=3, k2=2, H=64.
    pub fn new(variant: Variant, n_labels: usize) -> Self {
        ModelConfig {
            variant,
            embed_dim: 64,
            proj_dim: 32,
            conv_width: 3,
            pool_width: 2,
            hidden_dim: 64,
            n_labels,
            max_note_len: crate::data::DEFAULT_MAX_NOTE_LEN,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LerpError::Config(m.to_string()));
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1");
        }
        if self.proj_dim == 0 {
            return bad("proj_dim must be >= 1");
        }
        if self.conv_width.is_multiple_of(2) {
            return bad("conv_width must be odd");
        }
        if self.pool_width == 0 {
            return bad("pool_width must be >= 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.n_labels == 0 {
            return bad("n_labels must be >= 1");
        }
        if self.max_note_len == 0 {
            return bad("max_note_len must be >= 1");
        }
        Ok(())
    }
}

/// Fully connected layer `y = W·x + b` with `W: out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: he_normal(vec![output, input], input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// All learnable weights except the embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `f₁`: D → F, shared by notes, events and label names.
    pub projection: Linear,
    /// One `k1`-wide kernel applied to every event channel (event count
    /// varies per record). Present for [`Variant::Lerp`] only.
    pub event_conv: Option<ConvParams>,
    /// Full `N_Y × N_Y × k1` convolution over label channels.
    pub label_conv: Option<ConvParams>,
    /// `f₂`: 2D → H.
    pub fuse_in: Linear,
    /// `f₁′`: H → F.
    pub fuse_mid: Linear,
    /// `f₃`: F → N_Y.
    pub output: Linear,
}

fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("matching length")
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, f, k, h, ny) = (
            config.embed_dim,
            config.proj_dim,
            config.conv_width,
            config.hidden_dim,
            config.n_labels,
        );
        let projection = Linear::init(d, f, rng);
        let event_conv = (config.variant == Variant::Lerp).then(|| ConvParams {
            kernel: he_normal(vec![k], k, rng),
            bias: Tensor::zeros(&[1]),
        });
        let label_conv = (config.variant != Variant::Ts).then(|| ConvParams {
            kernel: he_normal(vec![ny, ny, k], ny * k, rng),
            bias: Tensor::zeros(&[ny]),
        });
        ModelParams {
            projection,
            event_conv,
            label_conv,
            fuse_in: Linear::init(2 * d, h, rng),
            fuse_mid: Linear::init(h, f, rng),
            output: Linear::init(f, ny, rng),
        }
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("projection.weight", &self.projection.weight),
            ("projection.bias", &self.projection.bias),
        ];
        if let Some(c) = &self.event_conv {
            out.push(("event_conv.kernel", &c.kernel));
            out.push(("event_conv.bias", &c.bias));
        }
        if let Some(c) = &self.label_conv {
            out.push(("label_conv.kernel", &c.kernel));
            out.push(("label_conv.bias", &c.bias));
        }
        out.extend([
            ("fuse_in.weight", &self.fuse_in.weight),
            ("fuse_in.bias", &self.fuse_in.bias),
            ("fuse_mid.weight", &self.fuse_mid.weight),
            ("fuse_mid.bias", &self.fuse_mid.bias),
            ("output.weight", &self.output.weight),
            ("output.bias", &self.output.bias),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("projection.weight", &mut self.projection.weight),
            ("projection.bias", &mut self.projection.bias),
        ];
        if let Some(c) = &mut self.event_conv {
            out.push(("event_conv.kernel", &mut c.kernel));
            out.push(("event_conv.bias", &mut c.bias));
        }
        if let Some(c) = &mut self.label_conv {
            out.push(("label_conv.kernel", &mut c.kernel));
            out.push(("label_conv.bias", &mut c.bias));
        }
        out.extend([
            ("fuse_in.weight", &mut self.fuse_in.weight),
            ("fuse_in.bias", &mut self.fuse_in.bias),
            ("fuse_mid.weight", &mut self.fuse_mid.weight),
            ("fuse_mid.bias", &mut self.fuse_mid.bias),
            ("output.weight", &mut self.output.weight),
            ("output.bias", &mut self.output.bias),
        ]);
        out
    }

    /// Expected `(name, shape)` of every tensor, in [`ModelParams::named`]
    /// order. Pure arithmetic; nothing is allocated.
    pub fn shapes(config: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
        let (d, f, k, h, ny) = (
            config.embed_dim,
            config.proj_dim,
            config.conv_width,
            config.hidden_dim,
            config.n_labels,
        );
        let mut out = vec![
            ("projection.weight", vec![f, d]),
            ("projection.bias", vec![f]),
        ];
        if config.variant == Variant::Lerp {
            out.push(("event_conv.kernel", vec![k]));
            out.push(("event_conv.bias", vec![1]));
        }
        if config.variant != Variant::Ts {
            out.push(("label_conv.kernel", vec![ny, ny, k]));
            out.push(("label_conv.bias", vec![ny]));
        }
        out.extend([
            ("fuse_in.weight", vec![h, d.saturating_mul(2)]),
            ("fuse_in.bias", vec![h]),
            ("fuse_mid.weight", vec![f, h]),
            ("fuse_mid.bias", vec![f]),
            ("output.weight", vec![ny, f]),
            ("output.bias", vec![ny]),
        ]);
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape
    /// against `config` before anything is allocated from it.
    pub fn from_named(config: &ModelConfig, mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let shapes = ModelParams::shapes(config);
        if tensors.len() != shapes.len() {
            return Err(LerpError::Checkpoint(format!(
                "expected {} parameter tensors for {}, found {}",
                shapes.len(),
                config.variant,
                tensors.len()
            )));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| LerpError::Checkpoint(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape {
                return Err(LerpError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(LerpError::Checkpoint(format!(
                    "tensor {name} has non-finite values"
                )));
            }
            Ok(t)
        };
        let mut found = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            found.push(take(name, shape)?);
        }
        let mut it = found.into_iter();
        let mut next = || it.next().expect("one tensor per shape");
        let linear = |next: &mut dyn FnMut() -> Tensor| Linear {
            weight: next(),
            bias: next(),
        };
        let projection = linear(&mut next);
        let event_conv = (config.variant == Variant::Lerp).then(|| ConvParams {
            kernel: next(),
            bias: next(),
        });
        let label_conv = (config.variant != Variant::Ts).then(|| ConvParams {
            kernel: next(),
            bias: next(),
        });
        Ok(ModelParams {
            projection,
            event_conv,
            label_conv,
            fuse_in: linear(&mut next),
            fuse_mid: linear(&mut next),
            output: linear(&mut next),
        })
    }
}

/// Model outputs for one record.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_hat: Vec<f64>,
    pub alpha_e: Vec<f64>,
    pub alpha_y: Vec<f64>,
}

/// Tape handles of a linear layer.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles of a branch convolution.
#[derive(Clone, Copy, Debug)]
pub enum BranchConv {
    /// `O×C×k` kernel, `O` bias.
    Full { kernel: Var, bias: Var },
    /// `k` kernel shared across channels, scalar bias.
    Shared { kernel: Var, bias: Var },
}

/// `W·x + b` for a `in×n` matrix `x`.
pub fn linear(tape: &mut Tape, layer: LinearVars, x: Var) -> Result<Var> {
    let wx = tape.matmul(layer.weight, x)?;
    tape.add_column_bias(wx, layer.bias)
}

fn linear_vec(tape: &mut Tape, layer: LinearVars, x: Var) -> Result<Var> {
    let n = tape.value(x).len();
    let col = tape.reshape(x, &[n, 1])?;
    let y = linear(tape, layer, col)?;
    let m = tape.value(y).len();
    tape.reshape(y, &[m])
}

/// `(f₁(em))ᵀ · f₁(ex) / √F`: an `N_M × N_X` matrix.
pub fn scaled_dot_similarity(
    tape: &mut Tape,
    em: Var,
    ex: Var,
    projection: LinearVars,
) -> Result<Var> {
    let d_w = tape.value(projection.weight).shape()[1];
    for v in [em, ex] {
        let rows = tape.value(v).dims2()?.0;
        if rows != d_w {
            return Err(LerpError::Dimension(format!(
                "embedding size {rows} does not match projection input {d_w}"
            )));
        }
    }
    let f = tape.value(projection.weight).shape()[0];
    let pm = linear(tape, projection, em)?;
    let px = linear(tape, projection, ex)?;
    let pmt = tape.transpose(pm)?;
    let g = tape.matmul(pmt, px)?;
    Ok(tape.scale(g, 1.0 / (f as f64).sqrt()))
}

/// Per-word attention score from a similarity matrix `g: N_M × N_X`.
///
/// Channels are entities, length is the note: convolve (same padding),
/// ReLU, take the max over channels, then a width-`pool_width` stride-1
/// same-padded max along the words. `pad` marks padding words.
pub fn attention_score(
    tape: &mut Tape,
    g: Var,
    conv: BranchConv,
    pool_width: usize,
    pad: &[bool],
) -> Result<Var> {
    let (n_m, n_x) = tape.value(g).dims2()?;
    if n_x == 0 {
        return Err(LerpError::Data("attention over zero entities".into()));
    }
    if pool_width > n_m {
        return Err(LerpError::Config(format!(
            "pool width {pool_width} exceeds note length {n_m}"
        )));
    }
    if pad.len() != n_m {
        return Err(LerpError::Dimension(format!(
            "pad mask of {} for {} words",
            pad.len(),
            n_m
        )));
    }
    let gt = tape.transpose(g)?;
    let keep: Vec<bool> = pad.iter().map(|&p| !p).collect();
    let gt = tape.mask_columns(gt, &keep)?;
    let c = match conv {
        BranchConv::Full { kernel, bias } => tape.conv1d(gt, kernel, bias)?,
        BranchConv::Shared { kernel, bias } => tape.conv1d_shared(gt, kernel, bias)?,
    };
    let r = tape.relu(c);
    let channels = tape.value(r).shape()[0];
    let over_channels = PoolSpec {
        axis: 0,
        window: channels,
        stride: channels,
        padding: Padding::Valid,
    };
    let m = tape.maxpool_axis(r, over_channels, None)?;
    let along_words = PoolSpec {
        axis: 1,
        window: pool_width,
        stride: 1,
        padding: Padding::Same,
    };
    let s = tape.maxpool_axis(m, along_words, Some(pad))?;
    tape.reshape(s, &[n_m])
}

/// Softmax of `u` over non-padding words, and the `α`-weighted sum of the
/// columns of `em`. Returns `(alpha, z)`.
pub fn weighted_pool(tape: &mut Tape, em: Var, u: Var, pad: &[bool]) -> Result<(Var, Var)> {
    let (d, n) = tape.value(em).dims2()?;
    if tape.value(u).shape() != [n] {
        return Err(LerpError::Dimension(format!(
            "scores {:?} do not match {n} words",
            tape.value(u).shape()
        )));
    }
    if pad.iter().all(|&p| p) {
        return Err(LerpError::Data("note consists only of padding".into()));
    }
    let alpha = tape.masked_softmax(u, pad)?;
    debug_assert!({
        let a = tape.value(alpha).data();
        let total: f64 = a.iter().sum();
        (total - 1.0).abs() <= 1e-6
            && a.iter()
                .zip(pad)
                .all(|(&w, &p)| w >= 0.0 && (!p || w == 0.0))
    });
    let col = tape.reshape(alpha, &[n, 1])?;
    let z = tape.matmul(em, col)?;
    let z = tape.reshape(z, &[d])?;
    Ok((alpha, z))
}

/// `sigmoid(f₃(f₁′(f₂(z_e ⊕ z_y))))`.
pub fn fusion_head(tape: &mut Tape, z_e: Var, z_y: Var, layers: [LinearVars; 3]) -> Result<Var> {
    let x = tape.concat(z_e, z_y)?;
    let h = linear_vec(tape, layers[0], x)?;
    let h = linear_vec(tape, layers[1], h)?;
    let logits = linear_vec(tape, layers[2], h)?;
    Ok(tape.sigmoid(logits))
}

/// Handles produced by [`Model::build_graph`].
#[derive(Clone, Debug)]
pub struct GraphVars {
    pub y_hat: Var,
    pub alpha_e: Var,
    pub alpha_y: Var,
    /// One handle per entry of [`Model::parameters`], same order.
    pub params: Vec<Var>,
    /// Number of leading real (non-appended) note positions.
    pub note_len: usize,
}

/// A trained or freshly initialized model with its vocabulary and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub embeddings: EmbeddingTable,
    pub catalog: LabelCatalog,
    pub params: ModelParams,
    label_entities: Vec<Vec<usize>>,
}

pub const EMBEDDINGS_NAME: &str = "embeddings";

impl Model {
    /// Initializes parameters from `config.seed`. Without `pretrained`, a
    /// trainable random table over `vocab` is drawn from the same stream.
    pub fn init(
        config: ModelConfig,
        vocab: Vocab,
        catalog: LabelCatalog,
        pretrained: Option<EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = match pretrained {
            Some(t) => t,
            None => EmbeddingTable::random(vocab.len(), config.embed_dim, &mut rng)?,
        };
        let params = ModelParams::init(&config, &mut rng);
        Model::from_parts(config, vocab, embeddings, catalog, params)
    }

    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        embeddings: EmbeddingTable,
        catalog: LabelCatalog,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embed_dim {
            return Err(LerpError::Config(format!(
                "embedding table has D={}, model expects {}",
                embeddings.dim(),
                config.embed_dim
            )));
        }
        if embeddings.vocab_size() != vocab.len() {
            return Err(LerpError::Config(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.vocab_size(),
                vocab.len()
            )));
        }
        if catalog.len() != config.n_labels {
            return Err(LerpError::Config(format!(
                "catalog has {} labels, model expects {}",
                catalog.len(),
                config.n_labels
            )));
        }
        let label_entities = encode_catalog(&catalog, &vocab)
            .iter()
            .map(|e| entity_ids(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config,
            vocab,
            embeddings,
            catalog,
            params,
            label_entities,
        })
    }

    pub fn encode(&self, record: &EhrRecord) -> EncodedRecord {
        encode_record(record, &self.vocab, self.config.max_note_len)
    }

    pub fn label_entities(&self) -> &[Vec<usize>] {
        &self.label_entities
    }

    /// Trainable tensors: the embedding table (when trainable) followed by
    /// [`ModelParams::named`].
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::new();
        if self.embeddings.is_trainable() {
            out.push((EMBEDDINGS_NAME, self.embeddings.weights()));
        }
        out.extend(self.params.named());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = Vec::new();
        if self.embeddings.is_trainable() {
            out.push((EMBEDDINGS_NAME, self.embeddings.weights_mut()));
        }
        out.extend(self.params.named_mut());
        out
    }

    /// Records the forward graph of one record on `tape`.
    pub fn build_graph(&self, tape: &mut Tape, record: &EncodedRecord) -> Result<GraphVars> {
        let cfg = &self.config;
        let note_len = record.note.len();
        if record.note.iter().all(|&t| t == PAD_ID) {
            return Err(LerpError::Data(format!(
                "record {:?} has an empty note",
                record.id
            )));
        }
        let mut note = record.note.clone();
        if note.len() < cfg.pool_width {
            note.resize(cfg.pool_width, PAD_ID);
        }
        let pad: Vec<bool> = note.iter().map(|&t| t == PAD_ID).collect();
        let with_id = |e: LerpError| match e {
            LerpError::Data(m) => LerpError::Data(format!("record {:?}: {m}", record.id)),
            other => other,
        };
        let events: Vec<Vec<usize>> = record
            .events
            .iter()
            .map(|e| entity_ids(e))
            .collect::<Result<_>>()
            .map_err(with_id)?;

        let mut params = Vec::new();
        let table = if self.embeddings.is_trainable() {
            let v = tape.leaf(self.embeddings.weights().clone());
            params.push(v);
            Some(v)
        } else {
            None
        };
        let p = &self.params;
        let mut lin = |tape: &mut Tape, l: &Linear| {
            let weight = tape.leaf(l.weight.clone());
            let bias = tape.leaf(l.bias.clone());
            params.extend([weight, bias]);
            LinearVars { weight, bias }
        };
        let projection = lin(tape, &p.projection);
        let conv = |tape: &mut Tape, c: &Option<ConvParams>, params: &mut Vec<Var>| {
            c.as_ref().map(|c| {
                let kernel = tape.leaf(c.kernel.clone());
                let bias = tape.leaf(c.bias.clone());
                params.extend([kernel, bias]);
                (kernel, bias)
            })
        };
        let event_conv = conv(tape, &p.event_conv, &mut params);
        let label_conv = conv(tape, &p.label_conv, &mut params);
        let mut lin = |tape: &mut Tape, l: &Linear| {
            let weight = tape.leaf(l.weight.clone());
            let bias = tape.leaf(l.bias.clone());
            params.extend([weight, bias]);
            LinearVars { weight, bias }
        };
        let head = [
            lin(tape, &p.fuse_in),
            lin(tape, &p.fuse_mid),
            lin(tape, &p.output),
        ];

        let embed_note_var = |tape: &mut Tape| -> Result<Var> {
            match table {
                Some(t) => tape.lookup(t, &note, PAD_ID),
                None => Ok(tape.leaf(embed_note(&self.embeddings, &note)?)),
            }
        };
        let embed_entities_var = |tape: &mut Tape, groups: &[Vec<usize>]| -> Result<Var> {
            match table {
                Some(t) => tape.lookup_mean(t, groups),
                None => Ok(tape.leaf(embed_entities(&self.embeddings, groups)?)),
            }
        };
        let em = embed_note_var(tape).map_err(with_id)?;

        let (alpha_e, alpha_y, y_hat) = match cfg.variant {
            Variant::Lerp | Variant::LerpMinus => {
                let (lk, lb) = label_conv.expect("label branch present");
                let ey = embed_entities_var(tape, &self.label_entities)?;
                let gy = scaled_dot_similarity(tape, em, ey, projection)?;
                let uy = attention_score(
                    tape,
                    gy,
                    BranchConv::Full {
                        kernel: lk,
                        bias: lb,
                    },
                    cfg.pool_width,
                    &pad,
                )?;
                let (alpha_y, z_y) = weighted_pool(tape, em, uy, &pad)?;
                if cfg.variant == Variant::LerpMinus {
                    let y = fusion_head(tape, z_y, z_y, head)?;
                    (alpha_y, alpha_y, y)
                } else {
                    let (ek, eb) = event_conv.expect("event branch present");
                    let ue = if events.is_empty() {
                        // No guidance: uniform attention over the note.
                        tape.leaf(Tensor::zeros(&[note.len()]))
                    } else {
                        let ee = embed_entities_var(tape, &events).map_err(with_id)?;
                        let ge = scaled_dot_similarity(tape, em, ee, projection)?;
                        attention_score(
                            tape,
                            ge,
                            BranchConv::Shared {
                                kernel: ek,
                                bias: eb,
                            },
                            cfg.pool_width,
                            &pad,
                        )?
                    };
                    let (alpha_e, z_e) = weighted_pool(tape, em, ue, &pad)?;
                    let y = fusion_head(tape, z_e, z_y, head)?;
                    (alpha_e, alpha_y, y)
                }
            }
            Variant::Ts => {
                let g = scaled_dot_similarity(tape, em, em, projection)?;
                let n = note.len();
                let real = pad.iter().filter(|&&p| !p).count() as f64;
                let weights: Vec<f64> = pad
                    .iter()
                    .map(|&p| if p { 0.0 } else { 1.0 / real })
                    .collect();
                let w = tape.leaf(Tensor::new(vec![n, 1], weights)?);
                let u = tape.matmul(g, w)?;
                let u = tape.reshape(u, &[n])?;
                let (alpha, z) = weighted_pool(tape, em, u, &pad)?;
                let y = fusion_head(tape, z, z, head)?;
                (alpha, alpha, y)
            }
        };
        Ok(GraphVars {
            y_hat,
            alpha_e,
            alpha_y,
            params,
            note_len,
        })
    }

    pub fn forward(&self, record: &EncodedRecord) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, record)?;
        let take = |v: Var| tape.value(v).data()[..g.note_len].to_vec();
        Ok(ForwardOutput {
            y_hat: tape.value(g.y_hat).data().to_vec(),
            alpha_e: take(g.alpha_e),
            alpha_y: take(g.alpha_y),
        })
    }

    /// Per-record loss and its gradient for every entry of
    /// [`Model::parameters`].
    pub fn loss_and_grads(&self, record: &EncodedRecord) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, record)?;
        let loss = tape.bce(g.y_hat, &record.labels)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        Ok((
            value,
            g.params.iter().map(|&v| tape.grad(v).clone()).collect(),
        ))
    }

    pub fn loss(&self, record: &EncodedRecord) -> Result<f64> {
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, record)?;
        let loss = tape.bce(g.y_hat, &record.labels)?;
        Ok(tape.value(loss).data()[0])
    }
}
