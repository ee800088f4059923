#![allow(dead_code, clippy::needless_range_loop)]

pub mod checks;

use lerp_core::data::{build_vocab, EhrRecord, EncodedRecord, LabelCatalog};
use lerp_core::model::{Model, ModelConfig, Variant};
use lerp_core::training::batch_loss_and_grads;
use lerp_oracle::{rows_of, Kind, Layer, Net};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const VARIANTS: [Variant; 3] = [Variant::Lerp, Variant::LerpMinus, Variant::Ts];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn catalog(n_labels: usize) -> LabelCatalog {
    let names = [
        "fever risk",
        "heart failure",
        "kidney injury",
        "lung infection",
        "sepsis",
        "stroke",
    ];
    LabelCatalog::new(names[..n_labels].iter().map(|s| s.to_string()).collect()).unwrap()
}

/// A random record over `w0..w19` plus event words `e0..e5`.
pub fn random_record(
    rng: &mut impl Rng,
    id: &str,
    note_len: usize,
    n_events: usize,
    n_labels: usize,
) -> EhrRecord {
    EhrRecord {
        id: id.to_string(),
        note: (0..note_len)
            .map(|_| format!("w{}", rng.random_range(0..20)))
            .collect(),
        events: (0..n_events)
            .map(|_| {
                let len = rng.random_range(1..=2);
                (0..len)
                    .map(|_| format!("e{}", rng.random_range(0..6)))
                    .collect()
            })
            .collect(),
        labels: (0..n_labels).map(|_| rng.random_range(0..2)).collect(),
    }
}

/// Small model over a vocabulary that covers every token of the random
/// record generator.
pub fn model_for(
    variant: Variant,
    n_labels: usize,
    seed: u64,
    shape: impl FnOnce(&mut ModelConfig),
) -> Model {
    let cat = catalog(n_labels);
    let all_words = EhrRecord {
        id: "vocab".into(),
        note: (0..20).map(|i| format!("w{i}")).collect(),
        events: (0..6).map(|i| vec![format!("e{i}")]).collect(),
        labels: vec![0; n_labels],
    };
    let vocab = build_vocab(&[all_words], &cat);
    let mut cfg = ModelConfig::new(variant, n_labels);
    cfg.embed_dim = 8;
    cfg.proj_dim = 4;
    cfg.conv_width = 3;
    cfg.pool_width = 2;
    cfg.hidden_dim = 6;
    cfg.seed = seed;
    shape(&mut cfg);
    let mut model = Model::init(cfg, vocab, cat, None).unwrap();
    // Nonzero biases exercise more of the graph than the zero init.
    let mut r = rng(seed ^ 0x5eed);
    for (_, t) in model.params.named_mut() {
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    model
}

/// The acceptance-scale instance: D=8, F=4, N_M=12, N_E=3, N_Y=4, k1=3, k2=2.
pub fn desk_instance(variant: Variant, seed: u64) -> (Model, EncodedRecord) {
    let model = model_for(variant, 4, seed, |_| {});
    let mut r = rng(seed.wrapping_mul(7919));
    let record = random_record(&mut r, "desk", 12, 3, 4);
    let encoded = model.encode(&record);
    (model, encoded)
}

pub fn to_net(model: &Model) -> Net {
    let layer = |w: &lerp_core::Tensor, b: &lerp_core::Tensor| Layer {
        weight: w.to_rows(),
        bias: b.data().to_vec(),
    };
    let p = &model.params;
    let (event_kernel, event_bias) = p.event_conv.as_ref().map_or((vec![], 0.0), |c| {
        (c.kernel.data().to_vec(), c.bias.data()[0])
    });
    let (label_kernel, label_bias) = p.label_conv.as_ref().map_or((vec![], vec![]), |c| {
        let s = c.kernel.shape();
        let (o, ch, k) = (s[0], s[1], s[2]);
        let kernel = (0..o)
            .map(|i| rows_of(&c.kernel.data()[i * ch * k..(i + 1) * ch * k], ch, k))
            .collect();
        (kernel, c.bias.data().to_vec())
    });
    Net {
        kind: match model.config.variant {
            Variant::Lerp => Kind::Full,
            Variant::LerpMinus => Kind::LabelOnly,
            Variant::Ts => Kind::SelfAttention,
        },
        table: model.embeddings.weights().to_rows(),
        projection: layer(&p.projection.weight, &p.projection.bias),
        event_kernel,
        event_bias,
        label_kernel,
        label_bias,
        fuse_in: layer(&p.fuse_in.weight, &p.fuse_in.bias),
        fuse_mid: layer(&p.fuse_mid.weight, &p.fuse_mid.bias),
        output: layer(&p.output.weight, &p.output.bias),
        pool_width: model.config.pool_width,
        label_tokens: model.label_entities().to_vec(),
    }
}

/// Largest `|g_ad − g_fd| / max(1, |g_fd|)` over every coordinate of every
/// trainable tensor, for the mean loss over `records`.
pub fn max_gradient_error(model: &Model, records: &[EncodedRecord], h: f64) -> f64 {
    let (_, grads) = batch_loss_and_grads(model, records).unwrap();
    let mut probe = model.clone();
    let n_tensors = grads.len();
    let mut worst = 0.0_f64;
    for t in 0..n_tensors {
        let len = grads[t].len();
        for i in 0..len {
            let orig = probe.parameters()[t].1.data()[i];
            let at = |x: f64, probe: &mut Model| {
                probe.parameters_mut()[t].1.data_mut()[i] = x;
                records.iter().map(|r| probe.loss(r).unwrap()).sum::<f64>() / records.len() as f64
            };
            let up = at(orig + h, &mut probe);
            let down = at(orig - h, &mut probe);
            at(orig, &mut probe);
            let fd = (up - down) / (2.0 * h);
            let ad = grads[t].data()[i];
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}
