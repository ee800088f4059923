//! Seeded graph-vs-loop comparisons. Each returns the largest absolute
//! deviation on one random instance.

use lerp_core::autodiff::Tape;
use lerp_core::metrics::roc_auc;
use lerp_core::model::{
    attention_score, fusion_head, scaled_dot_similarity, weighted_pool, BranchConv, LinearVars,
};
use lerp_core::{Tensor, Variant};
use lerp_oracle as oracle;
use rand::Rng;

use super::{model_for, random_record, rng, to_net, uniform};

pub fn matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], uniform(r, rows * cols)).unwrap()
}

/// Random padding mask with at least one real word.
pub fn random_pad(r: &mut impl Rng, n: usize) -> Vec<bool> {
    let mut pad: Vec<bool> = (0..n).map(|_| r.random_bool(0.25)).collect();
    let keep = r.random_range(0..n);
    pad[keep] = false;
    pad
}

pub fn linear_vars(
    tape: &mut Tape,
    r: &mut impl Rng,
    out: usize,
    inp: usize,
) -> (LinearVars, oracle::Layer) {
    let w = matrix(r, out, inp);
    let b = uniform(r, out);
    let layer = oracle::Layer {
        weight: w.to_rows(),
        bias: b.clone(),
    };
    let vars = LinearVars {
        weight: tape.leaf(w),
        bias: tape.leaf(Tensor::vector(b)),
    };
    (vars, layer)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn similarity(seed: u64) -> f64 {
    let mut r = rng(200 + seed);
    let (d, f, n_m, n_x) = (4, r.random_range(1..5), 3, 2);
    let mut tape = Tape::new();
    let em = matrix(&mut r, d, n_m);
    let ex = matrix(&mut r, d, n_x);
    let (proj, layer) = linear_vars(&mut tape, &mut r, f, d);
    let (vm, vx) = (tape.leaf(em.clone()), tape.leaf(ex.clone()));
    let g = scaled_dot_similarity(&mut tape, vm, vx, proj).unwrap();

    let pm = layer.apply_columns(&em.to_rows());
    let px = layer.apply_columns(&ex.to_rows());
    let mut expect = oracle::zeros(n_m, n_x);
    for i in 0..n_m {
        for j in 0..n_x {
            let dot: f64 = (0..f).map(|k| pm[k][i] * px[k][j]).sum();
            expect[i][j] = dot / (f as f64).sqrt();
        }
    }
    if tape.value(g).shape() != [n_m, n_x] {
        return f64::INFINITY;
    }
    max_abs_diff(tape.value(g).data(), &oracle::flatten(&expect))
}

/// Both the channel-mixing (label) and the shared-kernel (event) forms.
pub fn attention(seed: u64) -> f64 {
    let mut r = rng(300 + seed);
    let n_m = r.random_range(3..9);
    let n_x = r.random_range(1..4);
    let k1 = [1, 3, 5][r.random_range(0..3)];
    let k2 = r.random_range(1..=3.min(n_m));
    let pad = random_pad(&mut r, n_m);
    let g = matrix(&mut r, n_m, n_x);
    let mut tape = Tape::new();
    let vg = tape.leaf(g.clone());

    let k = Tensor::new(vec![n_x, n_x, k1], uniform(&mut r, n_x * n_x * k1)).unwrap();
    let b = uniform(&mut r, n_x);
    let conv = BranchConv::Full {
        kernel: tape.leaf(k.clone()),
        bias: tape.leaf(Tensor::vector(b.clone())),
    };
    let u = attention_score(&mut tape, vg, conv, k2, &pad).unwrap();
    let kernel = (0..n_x)
        .map(|o| oracle::rows_of(&k.data()[o * n_x * k1..(o + 1) * n_x * k1], n_x, k1))
        .collect();
    let expect = oracle::attention_score(
        &g.to_rows(),
        &oracle::Conv::Full { kernel, bias: b },
        k2,
        &pad,
    );
    let full = max_abs_diff(tape.value(u).data(), &expect);

    let k = uniform(&mut r, k1);
    let b = r.random_range(-0.5..0.5);
    let conv = BranchConv::Shared {
        kernel: tape.leaf(Tensor::vector(k.clone())),
        bias: tape.leaf(Tensor::vector(vec![b])),
    };
    let u = attention_score(&mut tape, vg, conv, k2, &pad).unwrap();
    let expect = oracle::attention_score(
        &g.to_rows(),
        &oracle::Conv::PerRow { kernel: k, bias: b },
        k2,
        &pad,
    );
    full.max(max_abs_diff(tape.value(u).data(), &expect))
}

/// Attention weights and pooled vector.
pub fn pooling(seed: u64) -> f64 {
    let mut r = rng(400 + seed);
    let (d, n) = (5, r.random_range(1..8));
    let pad = random_pad(&mut r, n);
    let em = matrix(&mut r, d, n);
    let u: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
    let mut tape = Tape::new();
    let (vm, vu) = (tape.leaf(em.clone()), tape.leaf(Tensor::vector(u.clone())));
    let (alpha, z) = weighted_pool(&mut tape, vm, vu, &pad).unwrap();
    let expect_alpha = oracle::masked_softmax(&u, &pad);
    let rows = em.to_rows();
    let expect_z: Vec<f64> = (0..d)
        .map(|k| (0..n).map(|i| expect_alpha[i] * rows[k][i]).sum())
        .collect();
    max_abs_diff(tape.value(alpha).data(), &expect_alpha)
        .max(max_abs_diff(tape.value(z).data(), &expect_z))
}

pub fn fusion(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let (d, h, f, ny) = (
        4,
        r.random_range(1..7),
        r.random_range(1..5),
        r.random_range(1..5),
    );
    let mut tape = Tape::new();
    let (l1, o1) = linear_vars(&mut tape, &mut r, h, 2 * d);
    let (l2, o2) = linear_vars(&mut tape, &mut r, f, h);
    let (l3, o3) = linear_vars(&mut tape, &mut r, ny, f);
    let (ze, zy) = (uniform(&mut r, d), uniform(&mut r, d));
    let (ve, vy) = (
        tape.leaf(Tensor::vector(ze.clone())),
        tape.leaf(Tensor::vector(zy.clone())),
    );
    let y = fusion_head(&mut tape, ve, vy, [l1, l2, l3]).unwrap();

    let x: Vec<f64> = ze.iter().chain(&zy).copied().collect();
    let a = oracle::affine(&o1.weight, &o1.bias, &x);
    let b = oracle::affine(&o2.weight, &o2.bias, &a);
    let expect: Vec<f64> = oracle::affine(&o3.weight, &o3.bias, &b)
        .into_iter()
        .map(oracle::sigmoid)
        .collect();
    max_abs_diff(tape.value(y).data(), &expect)
}

pub fn bce(seed: u64) -> f64 {
    let mut r = rng(600 + seed);
    let n = r.random_range(1..7);
    let p: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..2u8))).collect();
    let mut tape = Tape::new();
    let vp = tape.leaf(Tensor::vector(p.clone()));
    let loss = tape.bce(vp, &y).unwrap();
    (tape.value(loss).data()[0] - oracle::bce(&p, &y)).abs()
}

/// Coarse scores force plenty of ties. Infinite when exactly one side
/// reports the AUC as undefined.
pub fn auc(seed: u64) -> f64 {
    let mut r = rng(700 + seed);
    let n = r.random_range(2..40);
    let scores: Vec<f64> = (0..n)
        .map(|_| f64::from(r.random_range(0..6u8)) / 5.0)
        .collect();
    let targets: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    match (
        roc_auc(&scores, &targets),
        oracle::pairwise_auc(&scores, &targets),
    ) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Whole forward pass: predictions and both attention vectors.
pub fn whole_model(variant: Variant, seed: u64) -> f64 {
    let model = model_for(variant, 3, seed, |c| c.pool_width = 1 + (seed as usize % 3));
    let mut r = rng(800 + seed);
    let len = r.random_range(1..10);
    let n_events = r.random_range(0..4);
    let record = model.encode(&random_record(&mut r, "x", len, n_events, 3));
    let got = model.forward(&record).unwrap();
    let want = to_net(&model).forward(&record.note, &record.events);
    max_abs_diff(&got.y_hat, &want.y_hat)
        .max(max_abs_diff(&got.alpha_e, &want.alpha_e))
        .max(max_abs_diff(&got.alpha_y, &want.alpha_y))
}
