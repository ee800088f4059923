//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Tape`] in creation order, which is a
//! topological order by construction: an op can only reference nodes that
//! already exist. [`Tape::backward`] walks the tape in reverse and
//! accumulates `∂loss/∂node` into every node's gradient.
//!
//! There is no broadcasting. Every op checks its shapes and reports a
//! [`LerpError::Dimension`] naming them.
//!
//! ```
//! use lerp_core::autodiff::Tape;
//! use lerp_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).data(), &[2.0, -4.0, 6.0]);
//! ```

use crate::error::{LerpError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Windows never extend past the ends.
    Valid,
    /// Output length is `ceil(len / stride)`; out-of-range cells are ignored.
    Same,
}

/// Max-pool window along one axis of a matrix.
#[derive(Clone, Copy, Debug)]
pub struct PoolSpec {
    pub axis: usize,
    pub window: usize,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddColumnBias(Var, Var),
    Sum(Var),
    MeanScalars(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    MaskedSoftmax(Var),
    Concat(Var, Var),
    MaskColumns {
        input: Var,
        keep: Vec<bool>,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    Conv1dShared {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        sources: Vec<Option<usize>>,
    },
    Lookup {
        table: Var,
        ids: Vec<usize>,
        padding_id: usize,
    },
    LookupMean {
        table: Var,
        groups: Vec<Vec<usize>>,
    },
    Bce {
        input: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Log-clamping floor used by [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-12;

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> LerpError {
    LerpError::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q) = av.dims2()?;
        let (q2, r) = bv.dims2()?;
        if q != q2 {
            return Err(dim_err("matmul", av.shape(), bv.shape()));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for k in 0..q {
                let aik = ad[i * q + k];
                let row = &bd[k * r..(k + 1) * r];
                for (o, &bkj) in out[i * r..(i + 1) * r].iter_mut().zip(row) {
                    *o += aik * bkj;
                }
            }
        }
        let value = Tensor::new(vec![p, r], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        let value = Tensor::new(vec![c, r], transpose_data(av.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(dim_err("reshape", av.shape(), shape));
        }
        let value = Tensor::new(shape.to_vec(), av.data().to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(what, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, factor))
    }

    /// `x[p×n] + b[p]` added to every column.
    pub fn add_column_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (p, n) = xv.dims2()?;
        if bv.shape() != [p] {
            return Err(dim_err("add_column_bias", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for (i, row) in data.chunks_mut(n.max(1)).enumerate().take(p) {
            for v in row {
                *v += bv.data()[i];
            }
        }
        let value = Tensor::new(vec![p, n], data)?;
        Ok(self.push(value, Op::AddColumnBias(x, bias)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of scalar nodes, summed in the given order.
    pub fn mean_scalars(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(LerpError::Contract("mean of zero scalars".into()));
        }
        let mut total = 0.0;
        for &v in items {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(LerpError::Dimension(format!(
                    "mean_scalars: expected scalars, got shape {:?}",
                    t.shape()
                )));
            }
            total += t.data()[0];
        }
        let value = Tensor::scalar(total / items.len() as f64);
        Ok(self.push(value, Op::MeanScalars(items.to_vec())))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Softmax along `axis` (0 for vectors; 0 = down columns, 1 = along
    /// rows for matrices). Uses max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let lanes = Lanes::new(av.shape(), axis)?;
        let mut out = av.data().to_vec();
        for lane in 0..lanes.count {
            let idx: Vec<usize> = lanes.indices(lane).collect();
            softmax_in_place(&mut out, &idx);
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { input: a, axis }))
    }

    /// Softmax of a vector with `excluded[i] == true` positions treated as
    /// `-inf`: they receive exactly zero probability.
    pub fn masked_softmax(&mut self, a: Var, excluded: &[bool]) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != [excluded.len()] {
            return Err(dim_err("masked_softmax", av.shape(), &[excluded.len()]));
        }
        let idx: Vec<usize> = (0..excluded.len()).filter(|&i| !excluded[i]).collect();
        if idx.is_empty() {
            return Err(LerpError::Data("softmax over a fully masked vector".into()));
        }
        let mut out = vec![0.0; excluded.len()];
        for &i in &idx {
            out[i] = av.data()[i];
        }
        softmax_in_place(&mut out, &idx);
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::MaskedSoftmax(a)))
    }

    /// Concatenates two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || bv.rank() != 1 {
            return Err(dim_err("concat (rank-1 only)", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        Ok(self.push(Tensor::vector(data), Op::Concat(a, b)))
    }

    /// Zeroes the columns of a matrix where `keep[j]` is false.
    pub fn mask_columns(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        if keep.len() != c {
            return Err(dim_err("mask_columns", av.shape(), &[keep.len()]));
        }
        let mut data = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                if !keep[j] {
                    data[i * c + j] = 0.0;
                }
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(
            value,
            Op::MaskColumns {
                input: a,
                keep: keep.to_vec(),
            },
        ))
    }

    /// 1-D cross-correlation with zero "same" padding of `(k - 1) / 2` on
    /// each end. `x: C×L`, `kernel: O×C×k` (odd `k`), `bias: O` → `O×L`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        let (c, l) = xv.dims2()?;
        let &[o, kc, k] = kv.shape() else {
            return Err(LerpError::Dimension(format!(
                "conv1d kernel must be rank 3, got {:?}",
                kv.shape()
            )));
        };
        check_odd_width(k)?;
        if kc != c {
            return Err(dim_err(
                "conv1d input vs kernel channels",
                xv.shape(),
                kv.shape(),
            ));
        }
        if bv.shape() != [o] {
            return Err(dim_err("conv1d bias", kv.shape(), bv.shape()));
        }
        let pad = (k - 1) / 2;
        let (xd, kd) = (xv.data(), kv.data());
        let mut out = vec![0.0; o * l];
        for oc in 0..o {
            for t in 0..l {
                let mut acc = bv.data()[oc];
                for ic in 0..c {
                    for j in 0..k {
                        if let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < l) {
                            acc += kd[(oc * c + ic) * k + j] * xd[ic * l + src];
                        }
                    }
                }
                out[oc * l + t] = acc;
            }
        }
        let value = Tensor::new(vec![o, l], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input: x,
                kernel,
                bias,
            },
        ))
    }

    /// Like [`Tape::conv1d`] with one `k`-wide kernel and scalar bias
    /// applied to every channel independently: `C×L → C×L`. Used where the
    /// channel count varies between inputs.
    pub fn conv1d_shared(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        let (c, l) = xv.dims2()?;
        let &[k] = kv.shape() else {
            return Err(LerpError::Dimension(format!(
                "conv1d_shared kernel must be rank 1, got {:?}",
                kv.shape()
            )));
        };
        check_odd_width(k)?;
        if bv.shape() != [1] {
            return Err(dim_err("conv1d_shared bias", kv.shape(), bv.shape()));
        }
        let pad = (k - 1) / 2;
        let (xd, kd, b) = (xv.data(), kv.data(), bv.data()[0]);
        let mut out = vec![0.0; c * l];
        for ch in 0..c {
            for t in 0..l {
                let mut acc = b;
                for (j, &w) in kd.iter().enumerate() {
                    if let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < l) {
                        acc += w * xd[ch * l + src];
                    }
                }
                out[ch * l + t] = acc;
            }
        }
        let value = Tensor::new(vec![c, l], out)?;
        Ok(self.push(
            value,
            Op::Conv1dShared {
                input: x,
                kernel,
                bias,
            },
        ))
    }

    /// Max-pool a matrix along `spec.axis`. Positions with
    /// `excluded[i] == true` along that axis never win a window; a window
    /// with no eligible cell yields 0. Ties go to the lowest index.
    pub fn maxpool_axis(
        &mut self,
        x: Var,
        spec: PoolSpec,
        excluded: Option<&[bool]>,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if spec.axis > 1 {
            return Err(LerpError::Config(format!(
                "max-pool axis {} on a matrix",
                spec.axis
            )));
        }
        let n = if spec.axis == 0 { rows } else { cols };
        if spec.stride == 0 {
            return Err(LerpError::Config("max-pool stride must be >= 1".into()));
        }
        if spec.window == 0 || spec.window > n {
            return Err(LerpError::Config(format!(
                "max-pool window {} invalid for axis length {}",
                spec.window, n
            )));
        }
        if let Some(m) = excluded {
            if m.len() != n {
                return Err(dim_err("maxpool mask", xv.shape(), &[m.len()]));
            }
        }
        let (out_n, pad_before) = match spec.padding {
            Padding::Valid => ((n - spec.window) / spec.stride + 1, 0),
            Padding::Same => {
                let out_n = n.div_ceil(spec.stride);
                let total = ((out_n - 1) * spec.stride + spec.window).saturating_sub(n);
                (out_n, total / 2)
            }
        };
        let other = if spec.axis == 0 { cols } else { rows };
        let flat = |pos: usize, lane: usize| {
            if spec.axis == 0 {
                pos * cols + lane
            } else {
                lane * cols + pos
            }
        };
        let out_shape = if spec.axis == 0 {
            vec![out_n, cols]
        } else {
            vec![rows, out_n]
        };
        let out_flat = |o: usize, lane: usize| {
            if spec.axis == 0 {
                o * cols + lane
            } else {
                lane * out_n + o
            }
        };
        let xd = xv.data();
        let mut out = vec![0.0; out_n * other];
        let mut sources = vec![None; out_n * other];
        for lane in 0..other {
            for o in 0..out_n {
                let start = (o * spec.stride) as isize - pad_before as isize;
                let mut best: Option<usize> = None;
                for w in 0..spec.window as isize {
                    let p = start + w;
                    if p < 0 || p as usize >= n {
                        continue;
                    }
                    let p = p as usize;
                    if excluded.is_some_and(|m| m[p]) {
                        continue;
                    }
                    let idx = flat(p, lane);
                    if best.is_none_or(|b| xd[idx] > xd[b]) {
                        best = Some(idx);
                    }
                }
                let slot = out_flat(o, lane);
                if let Some(b) = best {
                    out[slot] = xd[b];
                }
                sources[slot] = best;
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MaxPool { input: x, sources }))
    }

    /// Gathers rows of `table: V×D` as the columns of a `D×N` matrix.
    /// `padding_id`'s row never receives gradient.
    pub fn lookup(&mut self, table: Var, ids: &[usize], padding_id: usize) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = tv.dims2()?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(LerpError::Data(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        let n = ids.len();
        let mut out = vec![0.0; d * n];
        for (col, &id) in ids.iter().enumerate() {
            for k in 0..d {
                out[k * n + col] = tv.data()[id * d + k];
            }
        }
        let value = Tensor::new(vec![d, n], out)?;
        Ok(self.push(
            value,
            Op::Lookup {
                table,
                ids: ids.to_vec(),
                padding_id,
            },
        ))
    }

    /// Column `i` is the mean of the rows of `table` listed in `groups[i]`.
    pub fn lookup_mean(&mut self, table: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = tv.dims2()?;
        let n = groups.len();
        let mut out = vec![0.0; d * n];
        for (col, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(LerpError::Data(format!("entity {col} has no tokens")));
            }
            if let Some(&bad) = group.iter().find(|&&id| id >= v) {
                return Err(LerpError::Data(format!(
                    "token id {bad} out of range for vocabulary of {v}"
                )));
            }
            let inv = 1.0 / group.len() as f64;
            for k in 0..d {
                let s: f64 = group.iter().map(|&id| tv.data()[id * d + k]).sum();
                out[k * n + col] = s * inv;
            }
        }
        let value = Tensor::new(vec![d, n], out)?;
        Ok(self.push(
            value,
            Op::LookupMean {
                table,
                groups: groups.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// logs clamped at [`BCE_EPS`].
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.shape() != [targets.len()] {
            return Err(dim_err("bce", pv.shape(), &[targets.len()]));
        }
        if targets.is_empty() {
            return Err(LerpError::Dimension("bce over zero labels".into()));
        }
        let n = targets.len() as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| y * p.max(BCE_EPS).ln() + (1.0 - y) * (1.0 - p).max(BCE_EPS).ln())
            .sum();
        let value = Tensor::scalar(-total / n);
        Ok(self.push(
            value,
            Op::Bce {
                input: probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Fills every node's gradient with `∂loss/∂node`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(LerpError::Contract("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(LerpError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
        self.nodes[loss.0].grad.data_mut()[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            propagate(node, before);
        }
        Ok(())
    }
}

fn check_odd_width(k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(LerpError::Config(format!(
            "convolution kernel width must be odd for same padding, got {k}"
        )));
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transpose_data(d: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    out
}

fn softmax_in_place(data: &mut [f64], idx: &[usize]) {
    let max = idx
        .iter()
        .map(|&i| data[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in idx {
        data[i] = (data[i] - max).exp();
        total += data[i];
    }
    for &i in idx {
        data[i] /= total;
    }
}

/// Index lanes of a vector or matrix along one axis.
struct Lanes {
    count: usize,
    len: usize,
    lane_stride: usize,
    step: usize,
}

impl Lanes {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        match (shape, axis) {
            (&[n], 0) => Ok(Lanes {
                count: 1,
                len: n,
                lane_stride: 0,
                step: 1,
            }),
            (&[r, c], 0) => Ok(Lanes {
                count: c,
                len: r,
                lane_stride: 1,
                step: c,
            }),
            (&[r, c], 1) => Ok(Lanes {
                count: r,
                len: c,
                lane_stride: c,
                step: 1,
            }),
            _ => Err(LerpError::Dimension(format!(
                "softmax axis {axis} invalid for shape {shape:?}"
            ))),
        }
    }

    fn indices(&self, lane: usize) -> impl Iterator<Item = usize> + Clone {
        let (base, step) = (lane * self.lane_stride, self.step);
        (0..self.len).map(move |i| base + i * step)
    }
}

fn softmax_backward(
    y: &[f64],
    g: &[f64],
    dx: &mut [f64],
    idx: impl Iterator<Item = usize> + Clone,
) {
    let dot: f64 = idx.clone().map(|i| g[i] * y[i]).sum();
    for i in idx {
        dx[i] += y[i] * (g[i] - dot);
    }
}

/// Accumulates `node.grad` into the gradients of its parents.
fn propagate(node: &Node, before: &mut [Node]) {
    let g = node.grad.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (p, q) = before[a.0].value.dims2().expect("matrix");
            let r = before[b.0].value.shape()[1];
            // dA = dC·Bᵀ
            let bd = before[b.0].value.data().to_vec();
            {
                let ga = before[a.0].grad.data_mut();
                for i in 0..p {
                    for k in 0..q {
                        let mut acc = 0.0;
                        for j in 0..r {
                            acc += g[i * r + j] * bd[k * r + j];
                        }
                        ga[i * q + k] += acc;
                    }
                }
            }
            // dB = Aᵀ·dC
            let ad = before[a.0].value.data().to_vec();
            let gb = before[b.0].grad.data_mut();
            for i in 0..p {
                for k in 0..q {
                    let aik = ad[i * q + k];
                    for j in 0..r {
                        gb[k * r + j] += aik * g[i * r + j];
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = before[a.0].value.dims2().expect("matrix");
            let gt = transpose_data(g, c, r);
            add_into(before[a.0].grad.data_mut(), &gt);
        }
        Op::Reshape(a) => add_into(before[a.0].grad.data_mut(), g),
        Op::Add(a, b) => {
            add_into(before[a.0].grad.data_mut(), g);
            add_into(before[b.0].grad.data_mut(), g);
        }
        Op::Mul(a, b) => {
            let av = before[a.0].value.data().to_vec();
            let bv = before[b.0].value.data().to_vec();
            for (i, gi) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                *gi += g[i] * bv[i];
            }
            for (i, gi) in before[b.0].grad.data_mut().iter_mut().enumerate() {
                *gi += g[i] * av[i];
            }
        }
        Op::Scale(a, f) => {
            for (gi, &go) in before[a.0].grad.data_mut().iter_mut().zip(g) {
                *gi += f * go;
            }
        }
        Op::AddColumnBias(x, b) => {
            add_into(before[x.0].grad.data_mut(), g);
            let (p, n) = node.value.dims2().expect("matrix");
            let gb = before[b.0].grad.data_mut();
            for i in 0..p {
                gb[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
            }
        }
        Op::Sum(a) => {
            for gi in before[a.0].grad.data_mut() {
                *gi += g[0];
            }
        }
        Op::MeanScalars(items) => {
            let share = g[0] / items.len() as f64;
            for v in items {
                before[v.0].grad.data_mut()[0] += share;
            }
        }
        Op::Relu(a) => {
            let av = before[a.0].value.data().to_vec();
            for (i, gi) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                if av[i] > 0.0 {
                    *gi += g[i];
                }
            }
        }
        Op::Sigmoid(a) => {
            for (i, gi) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                *gi += g[i] * out[i] * (1.0 - out[i]);
            }
        }
        Op::Softmax { input, axis } => {
            let lanes = Lanes::new(node.value.shape(), *axis).expect("validated on forward");
            let dx = before[input.0].grad.data_mut();
            for lane in 0..lanes.count {
                softmax_backward(out, g, dx, lanes.indices(lane));
            }
        }
        Op::MaskedSoftmax(input) => {
            let dx = before[input.0].grad.data_mut();
            // Excluded positions have y = 0, so they receive nothing.
            softmax_backward(out, g, dx, 0..out.len());
        }
        Op::Concat(a, b) => {
            let na = before[a.0].value.len();
            add_into(before[a.0].grad.data_mut(), &g[..na]);
            add_into(before[b.0].grad.data_mut(), &g[na..]);
        }
        Op::MaskColumns { input, keep } => {
            let c = keep.len();
            for (i, gi) in before[input.0].grad.data_mut().iter_mut().enumerate() {
                if keep[i % c] {
                    *gi += g[i];
                }
            }
        }
        Op::Conv1d {
            input,
            kernel,
            bias,
        } => {
            let (c, l) = before[input.0].value.dims2().expect("matrix");
            let &[o, _, k] = before[kernel.0].value.shape() else {
                unreachable!("validated on forward")
            };
            let pad = (k - 1) / 2;
            let xd = before[input.0].value.data().to_vec();
            let kd = before[kernel.0].value.data().to_vec();
            {
                let gb = before[bias.0].grad.data_mut();
                for oc in 0..o {
                    gb[oc] += g[oc * l..(oc + 1) * l].iter().sum::<f64>();
                }
            }
            let mut gk = vec![0.0; kd.len()];
            let mut gx = vec![0.0; xd.len()];
            for oc in 0..o {
                for t in 0..l {
                    let go = g[oc * l + t];
                    for ic in 0..c {
                        for j in 0..k {
                            if let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < l) {
                                let ki = (oc * c + ic) * k + j;
                                gk[ki] += go * xd[ic * l + src];
                                gx[ic * l + src] += go * kd[ki];
                            }
                        }
                    }
                }
            }
            add_into(before[kernel.0].grad.data_mut(), &gk);
            add_into(before[input.0].grad.data_mut(), &gx);
        }
        Op::Conv1dShared {
            input,
            kernel,
            bias,
        } => {
            let (c, l) = before[input.0].value.dims2().expect("matrix");
            let k = before[kernel.0].value.len();
            let pad = (k - 1) / 2;
            let xd = before[input.0].value.data().to_vec();
            let kd = before[kernel.0].value.data().to_vec();
            before[bias.0].grad.data_mut()[0] += g.iter().sum::<f64>();
            let mut gk = vec![0.0; k];
            let mut gx = vec![0.0; xd.len()];
            for ch in 0..c {
                for t in 0..l {
                    let go = g[ch * l + t];
                    for j in 0..k {
                        if let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < l) {
                            gk[j] += go * xd[ch * l + src];
                            gx[ch * l + src] += go * kd[j];
                        }
                    }
                }
            }
            add_into(before[kernel.0].grad.data_mut(), &gk);
            add_into(before[input.0].grad.data_mut(), &gx);
        }
        Op::MaxPool { input, sources } => {
            let gx = before[input.0].grad.data_mut();
            for (slot, src) in sources.iter().enumerate() {
                if let Some(s) = src {
                    gx[*s] += g[slot];
                }
            }
        }
        Op::Lookup {
            table,
            ids,
            padding_id,
        } => {
            let d = before[table.0].value.shape()[1];
            let n = ids.len();
            let gt = before[table.0].grad.data_mut();
            for (col, &id) in ids.iter().enumerate() {
                if id == *padding_id {
                    continue;
                }
                for k in 0..d {
                    gt[id * d + k] += g[k * n + col];
                }
            }
        }
        Op::LookupMean { table, groups } => {
            let d = before[table.0].value.shape()[1];
            let n = groups.len();
            let gt = before[table.0].grad.data_mut();
            for (col, group) in groups.iter().enumerate() {
                let inv = 1.0 / group.len() as f64;
                for &id in group {
                    for k in 0..d {
                        gt[id * d + k] += g[k * n + col] * inv;
                    }
                }
            }
        }
        Op::Bce { input, targets } => {
            let p = before[input.0].value.data().to_vec();
            let n = targets.len() as f64;
            let gp = before[input.0].grad.data_mut();
            for (j, &y) in targets.iter().enumerate() {
                let mut d = 0.0;
                if p[j] > BCE_EPS {
                    d -= y / p[j];
                }
                if 1.0 - p[j] > BCE_EPS {
                    d += (1.0 - y) / (1.0 - p[j]);
                }
                gp[j] += g[0] * d / n;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
