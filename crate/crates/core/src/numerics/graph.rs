//! Dynamically recorded compute graph with reverse-mode gradients.
//!
//! Every primitive call evaluates eagerly and appends a node; node order is a
//! topological order, so `backward` walks the node list in reverse once.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, axis_split, ConvGeom};
use super::params::ParamStore;
use super::{NumericsError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
/// Added to every Gaussian pdf value before normalizing position weights.
pub const GAUSSIAN_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Copy, Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
}

/// Updated running statistics produced by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferUpdate {
    pub key: String,
    pub mean: Tensor,
    pub var: Tensor,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    TransposeLast2(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var, usize),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Dropout(Var, Vec<f64>),
    Mean(Var, usize),
    Sum(Var),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Distance(Var, Var),
    GaussianWeights {
        mu: Var,
        log_sigma: Var,
        /// Unnormalized `pdf + floor` per (position, component).
        q: Vec<f64>,
        /// Row sums of `q`.
        norm: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::TransposeLast2(..) => "transpose",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Softmax(..) => "softmax",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Conv2d { .. } => "conv2d",
            Op::Dropout(..) => "dropout",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Distance(..) => "distance",
            Op::GaussianWeights { .. } => "gaussian_weights",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Distance(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::TransposeLast2(a)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a, _)
            | Op::Relu(a)
            | Op::Dropout(a, _)
            | Op::Mean(a, _)
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } | Op::BatchNorm { x, gain, bias, .. } => {
                vec![*x, *gain, *bias]
            }
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Concat(vs, _) => vs.clone(),
            Op::Narrow { x, .. } => vec![*x],
            Op::GaussianWeights { mu, log_sigma, .. } => vec![*mu, *log_sigma],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_var: HashMap<Var, Tensor>,
    by_param: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    pub fn params(&self) -> &HashMap<String, Tensor> {
        &self.by_param
    }

    /// Adds `other` into `self`, scaling by `weight`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (name, g) in &other.by_param {
            match self.by_param.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += weight * b;
                    }
                }
                None => {
                    self.by_param.insert(name.clone(), g.map(|v| v * weight));
                }
            }
        }
    }
}

/// Records primitive applications and differentiates through them.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: HashMap<String, Var>,
    buffer_updates: Vec<BufferUpdate>,
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

/// Number of times `b` repeats inside `a` under suffix broadcasting.
fn suffix_broadcast(a: &[usize], b: &[usize]) -> Option<usize> {
    if a == b {
        return Some(1);
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Some(a[..a.len() - b.len()].iter().product());
    }
    None
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let new_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&new_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < new_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, new_shape)
}

fn shape_without(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Running-stat updates recorded by train-mode batch norms.
    pub fn buffer_updates(&self) -> &[BufferUpdate] {
        &self.buffer_updates
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        let needs_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        // Backward caches are only kept when something upstream wants a gradient.
        let op = if needs_grad { op } else { strip_cache(op) };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var, NumericsError> {
        self.push(t, Op::Leaf)
    }

    /// Adds a constant leaf that never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NumericsError> {
        self.push(t.with_grad(false), Op::Leaf)
    }

    /// Binds a named parameter from `store`. Repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NumericsError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let entry = store.entry(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        let t = entry.tensor.clone().with_grad(entry.trainable);
        let v = self.leaf(t)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, usize), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        suffix_broadcast(sa, sb).ok_or_else(|| mismatch(name, format!("{sa:?} vs {sb:?}")))?;
        let av = self.value(a);
        let bd = self.value(b).data();
        let bl = bd.len();
        let data = av.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % bl])).collect();
        Ok((Tensor::new(av.shape().to_vec(), data)?, bl))
    }

    /// `a + b`; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, _) = self.elementwise(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, _) = self.elementwise(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, _) = self.elementwise(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let t = self.value(a).map(|v| v * s).with_grad(false);
        self.push(t, Op::Scale(a, s))
    }

    /// `[.., m, k] · [k, n]` (shared right operand) or batched `[.., m, k] · [.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, shared) = matmul_dims(&sa, &sb)?;
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), batch, m, k, n, shared);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        self.push(Tensor::new(shape, data)?, Op::MatMul(a, b))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(mismatch("transpose", format!("need ≥2 axes, got {:?}", self.shape(a))));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        let (data, shape) = permute_data(self.value(a).data(), self.shape(a), &perm);
        self.push(Tensor::new(shape, data)?, Op::TransposeLast2(a))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NumericsError> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", format!("{perm:?} for shape {:?}", self.shape(a))));
        }
        let (data, shape) = permute_data(self.value(a).data(), self.shape(a), perm);
        self.push(Tensor::new(shape, data)?, Op::Permute(a, perm.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self
            .value(a)
            .reshaped(shape)
            .map_err(|e| mismatch("reshape", e.to_string()))?
            .with_grad(false);
        self.push(t, Op::Reshape(a))
    }

    /// Collapses all but the first axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        let lead = s[0];
        let rest = s[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[lead, rest])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(mismatch("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mx = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..n {
                    let e = (x[at(j)] - mx).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    out[at(j)] /= s;
                }
            }
        }
        self.push(Tensor::new(shape, out)?, Op::Softmax(a, axis))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).map(|v| v.max(0.0)).with_grad(false);
        self.push(t, Op::Relu(a))
    }

    /// Per-row normalization over the last axis with learnable gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let d = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(mismatch("layer_norm", format!("param {:?} for last dim {d}", self.shape(p))));
            }
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.rows().enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Batch normalization over axis 1 of `[B, C, ...]`.
    ///
    /// Train mode normalizes with batch statistics and records a running-stat
    /// update under `key`; eval mode uses `running`.
    pub fn batch_norm(&mut self, x: Var, gain: Var, bias: Var, running: RunningStats<'_>, key: &str) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(mismatch("batch_norm", format!("need [B, C, ..], got {shape:?}")));
        }
        let c = shape[1];
        for p in [self.shape(gain), self.shape(bias), running.mean.shape(), running.var.shape()] {
            if p != [c] {
                return Err(mismatch("batch_norm", format!("param {p:?} for {c} channels")));
            }
        }
        let (outer, _, inner) = axis_split(&shape, 1);
        let count = (outer * inner) as f64;
        let xd = self.value(x).data();
        let at = |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;
        let batch_stats = self.mode == Mode::Train;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if batch_stats {
            for ch in 0..c {
                let mut s = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        s += xd[at(o, ch, i)];
                    }
                }
                mean[ch] = s / count;
                let mut v = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        v += (xd[at(o, ch, i)] - mean[ch]).powi(2);
                    }
                }
                var[ch] = v / count;
            }
        } else {
            mean.copy_from_slice(running.mean.data());
            var.copy_from_slice(running.var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let k = at(o, ch, i);
                    xhat[k] = (xd[k] - mean[ch]) * inv_std[ch];
                    out[k] = xhat[k] * g[ch] + b[ch];
                }
            }
        }
        if batch_stats {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = BATCH_NORM_MOMENTUM;
            let new_mean = running.mean.data().iter().zip(&mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
            let new_var = running
                .var
                .data()
                .iter()
                .zip(&var)
                .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
                .collect();
            self.buffer_updates.push(BufferUpdate {
                key: key.to_string(),
                mean: Tensor::vector(new_mean),
                var: Tensor::vector(new_var),
            });
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            t,
            Op::BatchNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Same-padded stride-1 convolution: `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]` (k odd), `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let bad = || mismatch("conv2d", format!("x {sx:?}, w {sw:?}, b {sb:?}"));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 || sb != [sw[0]] {
            return Err(bad());
        }
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            height: sx[2],
            width: sx[3],
            kernel: sw[2],
        };
        let data = kernels::conv2d(self.value(x).data(), self.value(w).data(), self.value(b).data(), geom);
        let t = Tensor::new(vec![sx[0], sw[0], sx[2], sx[3]], data)?;
        self.push(t, Op::Conv2d { x, w, b, geom })
    }

    /// Inverted dropout; identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.random::<f64>() >= rate { keep } else { 0.0 }).collect();
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Dropout(a, mask))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(mismatch("mean", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * n + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        self.push(Tensor::new(shape_without(&shape, axis), out)?, Op::Mean(a, axis))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = vars.first().ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for v in vars {
            let s = self.shape(*v);
            let same = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !same {
                return Err(mismatch("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in vars {
                let s = self.shape(*v);
                let chunk = s[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Tensor::new(shape, out)?, Op::Concat(vars.to_vec(), axis))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(mismatch("narrow", format!("[{start}, +{len}) on axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        self.push(Tensor::new(s, out)?, Op::Narrow { x: a, axis, start })
    }

    /// Euclidean distance between matching rows of the last axis.
    pub fn distance(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(mismatch("distance", format!("{sa:?} vs {sb:?}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av
            .rows()
            .zip(bv.rows())
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::new(shape_without(&sa, sa.len() - 1), out)?;
        self.push(t, Op::Distance(a, b))
    }

    /// Normalized Gaussian position weights `[positions, K]`.
    ///
    /// Row `n` holds `pdf(n; mu_k, sigma_k) + floor`, normalized to sum 1 over `k`,
    /// with `sigma_k = exp(log_sigma_k)`.
    pub fn gaussian_weights(&mut self, mu: Var, log_sigma: Var, positions: usize) -> Result<Var, NumericsError> {
        let (sm, ss) = (self.shape(mu).to_vec(), self.shape(log_sigma).to_vec());
        if sm.len() != 1 || sm != ss || positions == 0 {
            return Err(mismatch("gaussian_weights", format!("mu {sm:?}, log_sigma {ss:?}, N={positions}")));
        }
        let k = sm[0];
        let (m, ls) = (self.value(mu).data(), self.value(log_sigma).data());
        let norm_const = (2.0 * std::f64::consts::PI).sqrt();
        let mut q = vec![0.0; positions * k];
        let mut norm = vec![0.0; positions];
        for n in 0..positions {
            for j in 0..k {
                let sigma = ls[j].exp();
                let z = (n as f64 - m[j]) / sigma;
                q[n * k + j] = (-0.5 * z * z).exp() / (sigma * norm_const) + GAUSSIAN_FLOOR;
            }
            norm[n] = q[n * k..(n + 1) * k].iter().sum();
        }
        let w: Vec<f64> = q.iter().enumerate().map(|(i, v)| v / norm[i / k]).collect();
        let t = Tensor::new(vec![positions, k], w)?;
        self.push(t, Op::GaussianWeights { mu, log_sigma, q, norm })
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if loss.0 >= self.nodes.len() {
            return Err(NumericsError::BackwardBeforeForward);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, gi) in self.local_grads(node, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let mut out = Gradients::default();
        for (idx, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[idx];
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.needs_grad, g) {
                out.by_var.insert(Var(idx), Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        // Parameters that did not reach the loss still get a zero gradient.
        for (name, v) in &self.params {
            if self.nodes[v.0].needs_grad {
                let g = out
                    .by_var
                    .entry(*v)
                    .or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
                    .clone();
                out.by_param.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let bl = val(*b).len();
                let mut gb = vec![0.0; bl];
                for (i, gv) in g.iter().enumerate() {
                    gb[i % bl] += sign * gv;
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let bl = bd.len();
                let ga = g.iter().enumerate().map(|(i, gv)| gv * bd[i % bl]).collect();
                let mut gb = vec![0.0; bl];
                for (i, gv) in g.iter().enumerate() {
                    gb[i % bl] += gv * ad[i];
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
            Op::MatMul(a, b) => {
                let (batch, m, k, n, shared) = matmul_dims(shp(*a), shp(*b)).expect("checked in forward");
                let ga = kernels::matmul_nt(g, val(*b), batch, m, k, n, shared);
                let gb = kernels::matmul_tn(val(*a), g, batch, m, k, n, shared);
                vec![(*a, ga), (*b, gb)]
            }
            Op::TransposeLast2(a) => {
                let out_shape = node.value.shape();
                let nd = out_shape.len();
                let mut perm: Vec<usize> = (0..nd).collect();
                perm.swap(nd - 2, nd - 1);
                vec![(*a, permute_data(g, out_shape, &perm).0)]
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*a, permute_data(g, node.value.shape(), &inv).0)]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![(*a, gx)]
            }
            Op::Relu(a) => {
                let x = val(*a);
                vec![(*a, g.iter().zip(x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect())]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gn = val(*gain);
                let d = gn.len();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for (r, is) in inv_std.iter().enumerate() {
                    let row = r * d..(r + 1) * d;
                    let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                        let dh = gr[j] * gn[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let df = d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gn[j];
                        gx[r * d + j] = is / df * (df * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gbias)]
            }
            Op::BatchNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = node.value.shape();
                let c = shape[1];
                let (outer, _, inner) = axis_split(shape, 1);
                let count = (outer * inner) as f64;
                let gn = val(*gain);
                let at = |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;
                let mut gg = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        for i in 0..inner {
                            let k = at(o, ch, i);
                            gg[ch] += g[k] * xhat[k];
                            gbias[ch] += g[k];
                        }
                    }
                }
                let mut gx = vec![0.0; g.len()];
                for ch in 0..c {
                    let is = inv_std[ch];
                    if *batch_stats {
                        // Same closed form as layer norm, pooled over batch and spatial axes.
                        let sum_dh = gbias[ch] * gn[ch];
                        let sum_dh_h = gg[ch] * gn[ch];
                        for o in 0..outer {
                            for i in 0..inner {
                                let k = at(o, ch, i);
                                let dh = g[k] * gn[ch];
                                gx[k] = is / count * (count * dh - sum_dh - xhat[k] * sum_dh_h);
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for i in 0..inner {
                                let k = at(o, ch, i);
                                gx[k] = g[k] * gn[ch] * is;
                            }
                        }
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gbias)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(val(*x), val(*w), g, *geom);
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Dropout(a, mask) => vec![(*a, g.iter().zip(mask).map(|(gv, m)| gv * m).collect())],
            Op::Mean(a, axis) => {
                let (outer, n, inner) = axis_split(shp(*a), *axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            gx[(o * n + j) * inner + i] = g[o * inner + i] / n as f64;
                        }
                    }
                }
                vec![(*a, gx)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Concat(vars, axis) => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                vars.iter()
                    .map(|v| {
                        let len = shp(*v)[*axis];
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[start..start + len * inner]);
                        }
                        offset += len;
                        (*v, gv)
                    })
                    .collect()
            }
            Op::Narrow { x, axis, start } => {
                let (outer, n, inner) = axis_split(shp(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Distance(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let d = *shp(*a).last().unwrap_or(&1);
                let dist = node.value.data();
                let mut ga = vec![0.0; ad.len()];
                for (r, (&dr, &gr)) in dist.iter().zip(g).enumerate() {
                    // Subgradient 0 at coincident points.
                    if dr == 0.0 {
                        continue;
                    }
                    for j in r * d..(r + 1) * d {
                        ga[j] = gr * (ad[j] - bd[j]) / dr;
                    }
                }
                let gb = ga.iter().map(|v| -v).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::GaussianWeights { mu, log_sigma, q, norm } => {
                let (m, ls) = (val(*mu), val(*log_sigma));
                let k = m.len();
                let w = node.value.data();
                let mut gmu = vec![0.0; k];
                let mut gls = vec![0.0; k];
                for (n, s) in norm.iter().enumerate() {
                    let row = n * k..(n + 1) * k;
                    let dot: f64 = g[row.clone()].iter().zip(&w[row]).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        let dq = (g[n * k + j] - dot) / s;
                        let p = q[n * k + j] - GAUSSIAN_FLOOR;
                        let sigma = ls[j].exp();
                        let z = (n as f64 - m[j]) / sigma;
                        gmu[j] += dq * p * z / sigma;
                        gls[j] += dq * p * (z * z - 1.0);
                    }
                }
                vec![(*mu, gmu), (*log_sigma, gls)]
            }
        }
    }
}

fn strip_cache(op: Op) -> Op {
    match op {
        Op::LayerNorm { x, gain, bias, .. } => Op::LayerNorm {
            x,
            gain,
            bias,
            xhat: vec![],
            inv_std: vec![],
        },
        Op::BatchNorm {
            x,
            gain,
            bias,
            batch_stats,
            ..
        } => Op::BatchNorm {
            x,
            gain,
            bias,
            xhat: vec![],
            inv_std: vec![],
            batch_stats,
        },
        Op::Dropout(a, _) => Op::Dropout(a, vec![]),
        Op::GaussianWeights { mu, log_sigma, .. } => Op::GaussianWeights {
            mu,
            log_sigma,
            q: vec![],
            norm: vec![],
        },
        other => other,
    }
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, usize, bool), NumericsError> {
    let bad = || mismatch("matmul", format!("{sa:?} · {sb:?}"));
    if sa.len() < 2 || sb.len() < 2 {
        return Err(bad());
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != kb {
        return Err(bad());
    }
    let batch: usize = sa[..sa.len() - 2].iter().product();
    let shared = sb.len() == 2;
    if !shared && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
        return Err(bad());
    }
    Ok((batch, m, k, n, shared))
}
