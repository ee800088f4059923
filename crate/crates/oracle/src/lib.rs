//! Naive reference implementations used by the test suites.
//!
//! Everything here is written with plain nested loops over `Vec<Vec<f64>>`
//! and shares no code with `lerp-core`. Speed is irrelevant; each function
//! follows the textbook definition as literally as possible.

#![allow(clippy::needless_range_loop)]

pub type Matrix = Vec<Vec<f64>>;

pub fn zeros(rows: usize, cols: usize) -> Matrix {
    vec![vec![0.0; cols]; rows]
}

/// Row-major flat data to nested rows.
pub fn rows_of(data: &[f64], rows: usize, cols: usize) -> Matrix {
    assert_eq!(data.len(), rows * cols);
    (0..rows)
        .map(|r| data[r * cols..(r + 1) * cols].to_vec())
        .collect()
}

pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn transpose(a: &Matrix) -> Matrix {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    let mut out = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let k = b.len();
    let m = b.first().map_or(0, Vec::len);
    let mut out = zeros(n, m);
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `W·x + b` for a vector.
pub fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, &bi)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bi)
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Softmax over the positions where `excluded` is false; the rest get 0.
pub fn masked_softmax(x: &[f64], excluded: &[bool]) -> Vec<f64> {
    let kept: Vec<f64> = x
        .iter()
        .zip(excluded)
        .filter(|(_, &e)| !e)
        .map(|(&v, _)| v)
        .collect();
    let sm = softmax(&kept);
    let mut it = sm.into_iter();
    excluded
        .iter()
        .map(|&e| if e { 0.0 } else { it.next().unwrap() })
        .collect()
}

/// Zero-padded "same" cross-correlation: `out[o][t] = b[o] +
/// Σ_c Σ_j K[o][c][j] · x[c][t + j − (k−1)/2]`.
pub fn conv1d_same(x: &Matrix, kernel: &[Matrix], bias: &[f64]) -> Matrix {
    let c = x.len();
    let l = x[0].len();
    let k = kernel[0][0].len();
    assert!(k % 2 == 1);
    let half = (k as i64 - 1) / 2;
    let mut out = zeros(kernel.len(), l);
    for (o, ko) in kernel.iter().enumerate() {
        for t in 0..l {
            let mut s = bias[o];
            for ch in 0..c {
                for j in 0..k {
                    let src = t as i64 + j as i64 - half;
                    if src >= 0 && (src as usize) < l {
                        s += ko[ch][j] * x[ch][src as usize];
                    }
                }
            }
            out[o][t] = s;
        }
    }
    out
}

/// One kernel and bias applied to every row separately.
pub fn conv1d_per_row(x: &Matrix, kernel: &[f64], bias: f64) -> Matrix {
    x.iter()
        .map(|row| {
            let one = vec![vec![kernel.to_vec()]];
            conv1d_same(&vec![row.clone()], &one, &[bias]).remove(0)
        })
        .collect()
}

/// Stride-1 max over a `window`-wide neighbourhood with `(window−1)/2`
/// positions before and the rest after; excluded and out-of-range
/// positions are skipped, an empty window gives 0.
pub fn sliding_max(x: &[f64], window: usize, excluded: &[bool]) -> Vec<f64> {
    let n = x.len();
    let before = (window - 1) / 2;
    (0..n)
        .map(|t| {
            let lo = t as i64 - before as i64;
            let mut best: Option<f64> = None;
            for p in lo..lo + window as i64 {
                if p < 0 || p as usize >= n || excluded[p as usize] {
                    continue;
                }
                let v = x[p as usize];
                if best.is_none_or(|b| v > b) {
                    best = Some(v);
                }
            }
            best.unwrap_or(0.0)
        })
        .collect()
}

/// Which convolution an attention branch uses.
#[derive(Clone, Debug)]
pub enum Conv {
    Full { kernel: Vec<Matrix>, bias: Vec<f64> },
    PerRow { kernel: Vec<f64>, bias: f64 },
}

/// Score for each word of a note from the `N_M × N_X` similarity matrix.
pub fn attention_score(g: &Matrix, conv: &Conv, pool_width: usize, pad: &[bool]) -> Vec<f64> {
    let mut gt = transpose(g);
    for row in gt.iter_mut() {
        for (t, v) in row.iter_mut().enumerate() {
            if pad[t] {
                *v = 0.0;
            }
        }
    }
    let c = match conv {
        Conv::Full { kernel, bias } => conv1d_same(&gt, kernel, bias),
        Conv::PerRow { kernel, bias } => conv1d_per_row(&gt, kernel, *bias),
    };
    let n = pad.len();
    let col_max: Vec<f64> = (0..n)
        .map(|t| {
            c.iter()
                .map(|row| row[t].max(0.0))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    sliding_max(&col_max, pool_width, pad)
}

/// Linear layer as `(weight out×in, bias)`.
#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn apply_columns(&self, x: &Matrix) -> Matrix {
        let mut y = matmul(&self.weight, x);
        for (row, b) in y.iter_mut().zip(&self.bias) {
            for v in row.iter_mut() {
                *v += b;
            }
        }
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Full,
    LabelOnly,
    SelfAttention,
}

/// Everything needed to run the model by hand.
#[derive(Clone, Debug)]
pub struct Net {
    pub kind: Kind,
    /// `V × D` rows.
    pub table: Matrix,
    pub projection: Layer,
    pub event_kernel: Vec<f64>,
    pub event_bias: f64,
    pub label_kernel: Vec<Matrix>,
    pub label_bias: Vec<f64>,
    pub fuse_in: Layer,
    pub fuse_mid: Layer,
    pub output: Layer,
    pub pool_width: usize,
    pub label_tokens: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    pub y_hat: Vec<f64>,
    pub alpha_e: Vec<f64>,
    pub alpha_y: Vec<f64>,
}

impl Net {
    fn columns(&self, ids: &[usize]) -> Matrix {
        transpose(&ids.iter().map(|&i| self.table[i].clone()).collect())
    }

    fn mean_columns(&self, groups: &[Vec<usize>]) -> Matrix {
        let d = self.table[0].len();
        let rows: Matrix = groups
            .iter()
            .map(|g| {
                let real: Vec<usize> = g.iter().copied().filter(|&i| i != 0).collect();
                (0..d)
                    .map(|k| {
                        real.iter().map(|&i| self.table[i][k]).sum::<f64>() / real.len() as f64
                    })
                    .collect()
            })
            .collect();
        transpose(&rows)
    }

    fn similarity(&self, em: &Matrix, ex: &Matrix) -> Matrix {
        let f = self.projection.weight.len() as f64;
        let pm = self.projection.apply_columns(em);
        let px = self.projection.apply_columns(ex);
        let mut g = matmul(&transpose(&pm), &px);
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v /= f.sqrt();
            }
        }
        g
    }

    fn pool(em: &Matrix, alpha: &[f64]) -> Vec<f64> {
        em.iter()
            .map(|row| row.iter().zip(alpha).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn head(&self, z_e: &[f64], z_y: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = z_e.iter().chain(z_y).copied().collect();
        let h = affine(&self.fuse_in.weight, &self.fuse_in.bias, &x);
        let h = affine(&self.fuse_mid.weight, &self.fuse_mid.bias, &h);
        affine(&self.output.weight, &self.output.bias, &h)
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    /// Token id 0 is padding. Notes shorter than the pool width are padded
    /// up to it and the attention truncated back.
    pub fn forward(&self, note: &[usize], events: &[Vec<usize>]) -> NetOutput {
        let real_len = note.len();
        let mut ids = note.to_vec();
        while ids.len() < self.pool_width {
            ids.push(0);
        }
        let pad: Vec<bool> = ids.iter().map(|&t| t == 0).collect();
        let em = self.columns(&ids);
        let (alpha_e, alpha_y, y) = match self.kind {
            Kind::SelfAttention => {
                let g = self.similarity(&em, &em);
                let real = pad.iter().filter(|&&p| !p).count() as f64;
                let u: Vec<f64> = g
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&pad)
                            .filter(|(_, &p)| !p)
                            .map(|(v, _)| v / real)
                            .sum()
                    })
                    .collect();
                let alpha = masked_softmax(&u, &pad);
                let z = Net::pool(&em, &alpha);
                let y = self.head(&z, &z);
                (alpha.clone(), alpha, y)
            }
            Kind::Full | Kind::LabelOnly => {
                let ey = self.mean_columns(&self.label_tokens);
                let gy = self.similarity(&em, &ey);
                let conv = Conv::Full {
                    kernel: self.label_kernel.clone(),
                    bias: self.label_bias.clone(),
                };
                let uy = attention_score(&gy, &conv, self.pool_width, &pad);
                let alpha_y = masked_softmax(&uy, &pad);
                let z_y = Net::pool(&em, &alpha_y);
                if self.kind == Kind::LabelOnly {
                    let y = self.head(&z_y, &z_y);
                    (alpha_y.clone(), alpha_y, y)
                } else {
                    let ue = if events.is_empty() {
                        vec![0.0; ids.len()]
                    } else {
                        let ee = self.mean_columns(events);
                        let ge = self.similarity(&em, &ee);
                        let conv = Conv::PerRow {
                            kernel: self.event_kernel.clone(),
                            bias: self.event_bias,
                        };
                        attention_score(&ge, &conv, self.pool_width, &pad)
                    };
                    let alpha_e = masked_softmax(&ue, &pad);
                    let z_e = Net::pool(&em, &alpha_e);
                    let y = self.head(&z_e, &z_y);
                    (alpha_e, alpha_y, y)
                }
            }
        };
        NetOutput {
            y_hat: y,
            alpha_e: alpha_e[..real_len].to_vec(),
            alpha_y: alpha_y[..real_len].to_vec(),
        }
    }
}

/// Mean binary cross-entropy with logs floored at `1e-12`.
pub fn bce(p: &[f64], y: &[f64]) -> f64 {
    let eps = 1e-12_f64;
    let mut s = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        s -= yi * pi.max(eps).ln() + (1.0 - yi) * (1.0 - pi).max(eps).ln();
    }
    s / p.len() as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties worth a
/// half. `None` without both classes.
pub fn pairwise_auc(scores: &[f64], targets: &[u8]) -> Option<f64> {
    let mut good = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if targets[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if targets[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// `(tp, fp, fn)` with `score >= threshold` counted as positive.
pub fn counts(scores: &[f64], targets: &[u8], threshold: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &t) in scores.iter().zip(targets) {
        match (s >= threshold, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// Precision and recall, each 0 when its denominator is 0.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (p, r)
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` in coordinate `i`.
pub fn central_difference(
    x: &mut [f64],
    i: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
