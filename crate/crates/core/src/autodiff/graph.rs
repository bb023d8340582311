//! Reverse-mode tape over 2-D tensors.
//!
//! Every node records the op that produced it. `backward` walks the tape
//! once in reverse and returns gradients for leaves and parameters. Each
//! forward op checks its output for NaN/inf.

use super::params::{ParamId, ParamStore};
use super::{axpy, dot};
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ConcatCols(Vec<Var>),
    Gather { src: Var, index: Vec<usize> },
    SegmentOuter { h: Var, x: Var, offsets: Vec<usize>, mean: bool },
    SegmentMean { x: Var, offsets: Vec<usize> },
    Huber { pred: Var, target: Var, delta: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    relu_bits: Vec<u64>,
    relu_len: usize,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            relu_bits: Vec::new(),
            relu_len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Bitmask of which rectifier inputs were positive, in tape order.
    pub fn activation_pattern(&self) -> &[u64] {
        &self.relu_bits
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op, grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "input")
    }

    /// Input whose gradient is reported by `backward`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Copies a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        self.push(store.get(id).clone(), Op::Param(id), true, "parameter")
    }

    /// `x W^T + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin) = (xv.rows(), xv.cols());
        let cout = wv.rows();
        if wv.cols() != cin {
            return Err(Error::shape(format!("linear: input width {cin}, weight {:?}", wv.shape())));
        }
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.len() != cout {
                    return Err(Error::shape("linear: bias length"));
                }
                Some(bv.data())
            }
            None => None,
        };
        let mut out = vec![T::zero(); n * cout];
        let xd = xv.data();
        let wd = wv.data();
        for r in 0..n {
            let xr = &xd[r * cin..(r + 1) * cin];
            let yr = &mut out[r * cout..(r + 1) * cout];
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot(xr, &wd[o * cin..(o + 1) * cin]);
                if let Some(bd) = bias {
                    *y += bd[o];
                }
            }
        }
        let grad = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(vec![n, cout], out)?, Op::Linear { x, w, b }, grad, "linear")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let mut bits = std::mem::take(&mut self.relu_bits);
        let mut len = self.relu_len;
        let xv = self.value(x);
        let data: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| {
                let on = v > T::zero();
                if len % 64 == 0 {
                    bits.push(0);
                }
                if on {
                    *bits.last_mut().expect("pushed") |= 1 << (len % 64);
                }
                len += 1;
                if on {
                    v
                } else {
                    T::zero()
                }
            })
            .collect();
        let shape = xv.shape().to_vec();
        self.relu_bits = bits;
        self.relu_len = len;
        let grad = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Relu(x), grad, "relu")
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{name}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let grad = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Add(a, b), grad, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        let grad = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Mul(a, b), grad, "mul")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * s).collect();
        let shape = xv.shape().to_vec();
        let grad = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Scale(x, s), grad, "scale")
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let grad = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), grad, "sum")
    }

    /// Row-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let grad = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), grad, "concat")
    }

    /// Rows of `src` picked by `index`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let sv = self.value(src);
        let c = sv.cols();
        let rows = sv.rows();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= rows {
                return Err(Error::shape(format!("gather: row {i} of {rows}")));
            }
            out.extend_from_slice(sv.row(i));
        }
        let grad = self.needs(src);
        self.push(
            Tensor::new(vec![index.len(), c], out)?,
            Op::Gather { src, index: index.to_vec() },
            grad,
            "gather",
        )
    }

    /// For each segment `q` of rows `offsets[q]..offsets[q+1]`, the flattened
    /// outer product `sum_i h_i x_i^T` with entry `(a, j)` at column
    /// `a * c_in + j`. With `mean`, divides by the segment size; empty
    /// segments give zero.
    pub fn segment_outer(&mut self, h: Var, x: Var, offsets: &[usize], mean: bool) -> Result<Var> {
        let (hv, xv) = (self.value(h), self.value(x));
        let rows = hv.rows();
        if xv.rows() != rows || offsets.last().copied().unwrap_or(0) != rows || offsets.is_empty() {
            return Err(Error::shape(format!(
                "segment_outer: h {:?}, x {:?}, {} offsets",
                hv.shape(),
                xv.shape(),
                offsets.len()
            )));
        }
        let (cm, cin) = (hv.cols(), xv.cols());
        let q = offsets.len() - 1;
        let w = cm * cin;
        let mut out = vec![T::zero(); q * w];
        let (hd, xd) = (hv.data(), xv.data());
        for s in 0..q {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi < lo {
                return Err(Error::shape("segment_outer: offsets decrease"));
            }
            let o = &mut out[s * w..(s + 1) * w];
            for i in lo..hi {
                let xi = &xd[i * cin..(i + 1) * cin];
                for a in 0..cm {
                    axpy(hd[i * cm + a], xi, &mut o[a * cin..(a + 1) * cin]);
                }
            }
            if mean && hi > lo {
                let inv = T::one() / T::of((hi - lo) as f64);
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let grad = self.needs(h) || self.needs(x);
        self.push(
            Tensor::new(vec![q, w], out)?,
            Op::SegmentOuter { h, x, offsets: offsets.to_vec(), mean },
            grad,
            "segment_outer",
        )
    }

    /// Mean of the rows of each segment; empty segments give zero.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if offsets.is_empty() || offsets.last().copied() != Some(xv.rows()) {
            return Err(Error::shape("segment_mean: offsets"));
        }
        let c = xv.cols();
        let q = offsets.len() - 1;
        let mut out = vec![T::zero(); q * c];
        for s in 0..q {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let o = &mut out[s * c..(s + 1) * c];
            for i in lo..hi {
                axpy(T::one(), xv.row(i), o);
            }
            if hi > lo {
                let inv = T::one() / T::of((hi - lo) as f64);
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let grad = self.needs(x);
        self.push(
            Tensor::new(vec![q, c], out)?,
            Op::SegmentMean { x, offsets: offsets.to_vec() },
            grad,
            "segment_mean",
        )
    }

    /// Sum over all elements of the Huber penalty of `pred - target`.
    pub fn huber_sum(&mut self, pred: Var, target: Var, delta: T) -> Result<Var> {
        self.same_shape(pred, target, "huber")?;
        let s = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| huber(p - t, delta))
            .sum();
        let grad = self.needs(pred) || self.needs(target);
        self.push(Tensor::scalar(s), Op::Huber { pred, target, delta }, grad, "huber")
    }

    /// Mean over elements of the Huber penalty of `pred - target`.
    pub fn huber_loss(&mut self, pred: Var, target: Var, delta: T) -> Result<Var> {
        let n = self.value(pred).len().max(1);
        let s = self.huber_sum(pred, target, delta)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Runs reverse accumulation from a scalar node.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &gy, &mut grads);
            self.nodes[i].value = Tensor::zeros(vec![0]);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, nd)| match nd.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient"));
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, op: &Op<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let zeros_like = |v: Var| vec![T::zero(); nodes[v.0].value.len()];
        macro_rules! acc {
            ($v:expr) => {
                {
                    let v: Var = *$v;
                    grads[v.0].get_or_insert_with(|| zeros_like(v))
                }
            };
        }
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (n, cin, cout) = (xv.rows(), xv.cols(), wv.rows());
                if nodes[x.0].grad {
                    let gx = acc!(x);
                    for r in 0..n {
                        let gxr = &mut gx[r * cin..(r + 1) * cin];
                        for o in 0..cout {
                            let g = gy[r * cout + o];
                            if g != T::zero() {
                                axpy(g, wv.row(o), gxr);
                            }
                        }
                    }
                }
                if nodes[w.0].grad {
                    let gw = acc!(w);
                    for r in 0..n {
                        let xr = xv.row(r);
                        for o in 0..cout {
                            let g = gy[r * cout + o];
                            if g != T::zero() {
                                axpy(g, xr, &mut gw[o * cin..(o + 1) * cin]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if nodes[b.0].grad {
                        let gb = acc!(b);
                        for r in 0..n {
                            axpy(T::one(), &gy[r * cout..(r + 1) * cout], gb);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let y = nodes[i].value.data();
                let gx = acc!(x);
                for ((g, &yv), &d) in gx.iter_mut().zip(y).zip(gy) {
                    if yv > T::zero() {
                        *g += d;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if nodes[v.0].grad {
                        axpy(T::one(), gy, acc!(v));
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if nodes[v.0].grad {
                        let od = nodes[other.0].value.data();
                        let g = acc!(v);
                        for ((gi, &d), &o) in g.iter_mut().zip(gy).zip(od) {
                            *gi += d * o;
                        }
                    }
                }
            }
            Op::Scale(x, s) => axpy(*s, gy, acc!(x)),
            Op::Sum(x) => {
                let g = acc!(x);
                g.iter_mut().for_each(|v| *v += gy[0]);
            }
            Op::ConcatCols(parts) => {
                let n = nodes[i].value.rows();
                let total = nodes[i].value.cols();
                let mut start = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    if nodes[p.0].grad {
                        let g = acc!(p);
                        for r in 0..n {
                            axpy(
                                T::one(),
                                &gy[r * total + start..r * total + start + c],
                                &mut g[r * c..(r + 1) * c],
                            );
                        }
                    }
                    start += c;
                }
            }
            Op::Gather { src, index } => {
                let c = nodes[src.0].value.cols();
                let g = acc!(src);
                for (r, &s) in index.iter().enumerate() {
                    axpy(T::one(), &gy[r * c..(r + 1) * c], &mut g[s * c..(s + 1) * c]);
                }
            }
            Op::SegmentOuter { h, x, offsets, mean } => {
                let (hv, xv) = (&nodes[h.0].value, &nodes[x.0].value);
                let (cm, cin) = (hv.cols(), xv.cols());
                let w = cm * cin;
                let (hd, xd) = (hv.data(), xv.data());
                let mut gh = nodes[h.0].grad.then(|| zeros_like(*h));
                let mut gx = nodes[x.0].grad.then(|| zeros_like(*x));
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if hi == lo {
                        continue;
                    }
                    let scale = if *mean { T::one() / T::of((hi - lo) as f64) } else { T::one() };
                    let go = &gy[s * w..(s + 1) * w];
                    for r in lo..hi {
                        let xi = &xd[r * cin..(r + 1) * cin];
                        for a in 0..cm {
                            let block = &go[a * cin..(a + 1) * cin];
                            if let Some(gh) = gh.as_mut() {
                                gh[r * cm + a] += scale * dot(block, xi);
                            }
                            if let Some(gx) = gx.as_mut() {
                                axpy(scale * hd[r * cm + a], block, &mut gx[r * cin..(r + 1) * cin]);
                            }
                        }
                    }
                }
                if let Some(g) = gh {
                    axpy(T::one(), &g, acc!(h));
                }
                if let Some(g) = gx {
                    axpy(T::one(), &g, acc!(x));
                }
            }
            Op::SegmentMean { x, offsets } => {
                let c = nodes[x.0].value.cols();
                let g = acc!(x);
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if hi == lo {
                        continue;
                    }
                    let inv = T::one() / T::of((hi - lo) as f64);
                    for r in lo..hi {
                        axpy(inv, &gy[s * c..(s + 1) * c], &mut g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Huber { pred, target, delta } => {
                let (pd, td) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
                let d: Vec<T> = pd.iter().zip(td).map(|(&p, &t)| huber_grad(p - t, *delta) * gy[0]).collect();
                if nodes[pred.0].grad {
                    axpy(T::one(), &d, acc!(pred));
                }
                if nodes[target.0].grad {
                    axpy(-T::one(), &d, acc!(target));
                }
            }
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Huber penalty: quadratic within `delta`, linear beyond.
pub fn huber<T: Real>(e: T, delta: T) -> T {
    let a = e.abs();
    if a <= delta {
        T::of(0.5) * e * e
    } else {
        delta * (a - T::of(0.5) * delta)
    }
}

fn huber_grad<T: Real>(e: T, delta: T) -> T {
    e.max(-delta).min(delta)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Adds parameter gradients into per-parameter buffers indexed by id.
    pub fn accumulate(&self, into: &mut [Vec<T>]) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                axpy(T::one(), g, &mut into[id.index()]);
            }
        }
    }
}
