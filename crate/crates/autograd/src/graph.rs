//! The recording tape and its reverse sweep.
//!
//! Every operation appends one node holding its output value and enough
//! context to apply its vector-Jacobian product. Nodes are only ever appended,
//! so node order is a topological order and the backward pass is a single
//! reverse scan. A graph supports exactly one backward pass; record a new
//! graph for the next forward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{self, ConvGeom};
use crate::error::{invalid, mismatch, AutogradError, Result};
use crate::interp;
use crate::real::Real;
use crate::tensor::{spatial3, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Slope applied below zero; must lie in (0, 1).
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const LEAKY_DEFAULT: Activation = Activation::LeakyRelu(0.2);

    fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu(a) if !(a > 0.0 && a < 1.0) => {
                Err(invalid("activation", format!("leaky_relu slope {a} outside (0,1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Mean absolute value.
    L1,
    /// Sum of squares.
    SumSq,
}

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    Upsample {
        x: usize,
        factor: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    InstanceNorm {
        x: usize,
        inv_std: Vec<T>,
    },
    Reduce {
        x: usize,
        kind: Reduction,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale {
        x: usize,
        factor: T,
    },
    Shift {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: usize,
    },
    SpatialMean {
        x: usize,
    },
    GridSample {
        img: usize,
        grid: usize,
    },
    AffinePoints {
        theta: usize,
        coords: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, axis extent, inner)` for a row-major shape.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(AutogradError::ForeignVar);
        }
        Ok(v.index)
    }

    /// Output value of `v`. Panics if `v` belongs to another graph.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.idx(v).expect("variable from a different graph");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.idx(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    /// Gradient of the backward root with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let i = self.idx(v).ok()?;
        let g = self.grads.get(i)?.as_ref()?;
        Tensor::new(self.nodes[i].value.shape().to_vec(), g.clone()).ok()
    }

    pub fn backward_done(&self) -> bool {
        self.backward_done
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if self.backward_done {
            return Err(AutogradError::BackwardAlreadyRun);
        }
        if !value.is_finite() {
            return Err(AutogradError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf, &[])?;
        self.nodes[v.index].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A constant copy of `v`: same value, no gradient path back.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.nodes[self.idx(v)?].value.clone();
        self.constant(value)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let geom = ConvGeom::new(self.nodes[xi].value.shape(), self.nodes[wi].value.shape(), stride, padding)?;
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [geom.cout] {
                return Err(mismatch(
                    "conv",
                    format!("bias {:?} for {} output channels", self.nodes[bi].value.shape(), geom.cout),
                ));
            }
        }
        let out = conv::forward(
            &geom,
            self.nodes[xi].value.data(),
            self.nodes[wi].value.data(),
            bi.map(|i| self.nodes[i].value.data()),
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        self.push("conv", value, Op::Conv { x: xi, w: wi, b: bi, geom }, &inputs)
    }

    /// Linear (bi/tri-linear) upsampling of every spatial axis by `factor`.
    pub fn upsample_linear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        if factor < 1 {
            return Err(invalid("upsample_linear", "factor must be at least 1"));
        }
        let shape = self.nodes[xi].value.shape().to_vec();
        spatial3("upsample_linear", &shape)?;
        let out = interp::upsample_forward(self.nodes[xi].value.data(), &shape, factor);
        let mut oshape = shape.clone();
        for s in &mut oshape[2..] {
            *s *= factor;
        }
        let value = Tensor::new(oshape, out)?;
        self.push("upsample_linear", value, Op::Upsample { x: xi, factor }, &[xi])
    }

    /// `x [B,F] * w[O,F]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (xs, ws) = (self.nodes[xi].value.shape(), self.nodes[wi].value.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let (bsz, f, o) = (xs[0], xs[1], ws[0]);
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [o] {
                return Err(mismatch("linear", format!("bias {:?} for {o} outputs", self.nodes[bi].value.shape())));
            }
        }
        let mut out = vec![T::zero(); bsz * o];
        if let Some(bi) = bi {
            for row in out.chunks_mut(o) {
                row.copy_from_slice(self.nodes[bi].value.data());
            }
        }
        T::gemm(
            bsz,
            f,
            o,
            T::one(),
            self.nodes[xi].value.data(),
            (f as isize, 1),
            self.nodes[wi].value.data(),
            (1, f as isize),
            T::one(),
            &mut out,
            (o as isize, 1),
        );
        let value = Tensor::new(vec![bsz, o], out)?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        self.push("linear", value, Op::Linear { x: xi, w: wi, b: bi }, &inputs)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.map(|v| match kind {
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::lit(a)
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Activation::Tanh => v.tanh(),
        });
        self.push("activation", value, Op::Act { x: xi, kind }, &[xi])
    }

    /// Per (batch, channel) standardization over the spatial axes.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.nodes[xi].value.shape().to_vec();
        if shape.len() < 3 {
            return Err(mismatch("instance_norm", format!("expected [B,C,spatial..], got {shape:?}")));
        }
        let plane: usize = shape[2..].iter().product();
        if plane < 2 {
            return Err(invalid("instance_norm", "spatial size must be at least 2"));
        }
        let data = self.nodes[xi].value.data();
        let mut out = vec![T::zero(); data.len()];
        let mut inv_std = Vec::with_capacity(shape[0] * shape[1]);
        let n = T::lit(plane as f64);
        for (src, dst) in data.chunks(plane).zip(out.chunks_mut(plane)) {
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::lit(eps)).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(shape, out)?;
        self.push("instance_norm", value, Op::InstanceNorm { x: xi, inv_std }, &[xi])
    }

    pub fn reduce(&mut self, x: Var, kind: Reduction) -> Result<Var> {
        let xi = self.idx(x)?;
        let data = self.nodes[xi].value.data();
        if data.is_empty() {
            return Err(AutogradError::Empty { op: "reduce" });
        }
        // accumulate in f64 so long reductions do not drift
        let n = data.len() as f64;
        let s = match kind {
            Reduction::Sum => data.iter().map(|v| v.as_f64()).sum::<f64>(),
            Reduction::Mean => data.iter().map(|v| v.as_f64()).sum::<f64>() / n,
            Reduction::L1 => data.iter().map(|v| v.as_f64().abs()).sum::<f64>() / n,
            Reduction::SumSq => data.iter().map(|v| v.as_f64().powi(2)).sum::<f64>(),
        };
        self.push("reduce", Tensor::scalar(T::lit(s)), Op::Reduce { x: xi, kind }, &[xi])
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.nodes[ai].value.shape(), self.nodes[bi].value.shape()),
            ));
        }
        Ok((ai, bi))
    }

    fn zip_with(&self, ai: usize, bi: usize, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (a, b) = (&self.nodes[ai].value, &self.nodes[bi].value);
        Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary_shapes("add", a, b)?;
        let value = self.zip_with(ai, bi, |x, y| x + y)?;
        self.push("add", value, Op::Add(ai, bi), &[ai, bi])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary_shapes("sub", a, b)?;
        let value = self.zip_with(ai, bi, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(ai, bi), &[ai, bi])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary_shapes("mul", a, b)?;
        let value = self.zip_with(ai, bi, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(ai, bi), &[ai, bi])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let f = T::lit(factor);
        let value = self.nodes[xi].value.map(|v| v * f);
        self.push("scale", value, Op::Scale { x: xi, factor: f }, &[xi])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let c = T::lit(offset);
        let value = self.nodes[xi].value.map(|v| v + c);
        self.push("add_scalar", value, Op::Shift { x: xi }, &[xi])
    }

    /// Sum of several same-shape variables.
    pub fn sum_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or(AutogradError::Empty { op: "sum_all" })?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let idxs = xs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = idxs.first().ok_or(AutogradError::Empty { op: "concat" })?;
        let base = self.nodes[*first].value.shape().to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !ok {
                return Err(mismatch("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in &idxs {
                let n = self.nodes[i].value.shape()[axis] * inner;
                out.extend_from_slice(&self.nodes[i].value.data()[o * n..(o + 1) * n]);
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat { xs: idxs.clone(), axis }, &idxs)
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.nodes[xi].value.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(invalid("narrow", format!("[{start}, {start}+{len}) on axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let data = self.nodes[xi].value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor::new(oshape, out)?;
        self.push("narrow", value, Op::Narrow { x: xi, axis, start }, &[xi])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { x: xi }, &[xi])
    }

    /// Mean over spatial axes: `[B, C, spatial..] -> [B, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.nodes[xi].value.shape().to_vec();
        if shape.len() < 3 {
            return Err(mismatch("spatial_mean", format!("expected [B,C,spatial..], got {shape:?}")));
        }
        let plane: usize = shape[2..].iter().product();
        let out = self.nodes[xi]
            .value
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() / T::lit(plane as f64))
            .collect();
        let value = Tensor::new(vec![shape[0], shape[1]], out)?;
        self.push("spatial_mean", value, Op::SpatialMean { x: xi }, &[xi])
    }

    /// Sample `img [B,C,spatial]` at the normalized coordinates in
    /// `grid [B,D,out_spatial]` with linear interpolation and border clamping.
    ///
    /// Channel `i` of the grid addresses spatial axis `i` of the image.
    pub fn grid_sample(&mut self, img: Var, grid: Var) -> Result<Var> {
        let (ii, gi) = (self.idx(img)?, self.idx(grid)?);
        let (is, gs) = (self.nodes[ii].value.shape(), self.nodes[gi].value.shape());
        spatial3("grid_sample", is)?;
        let rank = is.len() - 2;
        if gs.len() < 3 || gs[0] != is[0] || gs[1] != rank || gs.len() - 2 != rank {
            return Err(mismatch("grid_sample", format!("image {is:?} vs grid {gs:?}")));
        }
        let out = interp::grid_sample_forward(self.nodes[ii].value.data(), is, self.nodes[gi].value.data(), gs);
        let mut shape = vec![is[0], is[1]];
        shape.extend_from_slice(&gs[2..]);
        let value = Tensor::new(shape, out)?;
        self.push("grid_sample", value, Op::GridSample { img: ii, grid: gi }, &[ii, gi])
    }

    /// Apply per-batch affine maps `theta [B,D,D+1]` to coordinate fields
    /// `coords [B,D,spatial]`: `out = theta[:, :, :D] * c + theta[:, :, D]`.
    pub fn affine_points(&mut self, theta: Var, coords: Var) -> Result<Var> {
        let (ti, ci) = (self.idx(theta)?, self.idx(coords)?);
        let (ts, cs) = (self.nodes[ti].value.shape(), self.nodes[ci].value.shape());
        if ts.len() != 3 || cs.len() < 3 || ts[0] != cs[0] || ts[1] != cs[1] || ts[2] != ts[1] + 1 {
            return Err(mismatch("affine_points", format!("theta {ts:?} vs coords {cs:?}")));
        }
        let (bsz, d) = (ts[0], ts[1]);
        let plane: usize = cs[2..].iter().product();
        let (th, c) = (self.nodes[ti].value.data(), self.nodes[ci].value.data());
        let mut out = vec![T::zero(); c.len()];
        for b in 0..bsz {
            for i in 0..d {
                let row = &th[(b * d + i) * (d + 1)..(b * d + i + 1) * (d + 1)];
                let dst = &mut out[(b * d + i) * plane..(b * d + i + 1) * plane];
                dst.fill(row[d]);
                for (j, &m) in row[..d].iter().enumerate() {
                    let src = &c[(b * d + j) * plane..(b * d + j + 1) * plane];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += m * s;
                    }
                }
            }
        }
        let value = Tensor::new(cs.to_vec(), out)?;
        self.push("affine_points", value, Op::AffinePoints { theta: ti, coords: ci }, &[ti, ci])
    }

    /// Populate gradients of the scalar `root` for every node it depends on.
    /// Gradients of interior nodes stay available through [`Graph::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let ri = self.idx(root)?;
        if self.backward_done {
            return Err(AutogradError::BackwardAlreadyRun);
        }
        let rshape = self.nodes[ri].value.shape();
        if self.nodes[ri].value.numel() != 1 {
            return Err(AutogradError::NotScalar(rshape.to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[ri] = Some(vec![T::one()]);
        for i in (0..=ri).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (target, contribution) in self.vjp(i, &g) {
                if self.nodes[target].requires_grad {
                    accumulate(&mut grads[target], contribution);
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn vjp(&self, i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let rg = |j: usize| self.nodes[j].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let need = [rg(*x), rg(*w), b.map(rg).unwrap_or(false)];
                let grads = conv::backward(geom, val(*x).data(), val(*w).data(), g, need);
                out.extend(grads.input.map(|d| (*x, d)));
                out.extend(grads.weight.map(|d| (*w, d)));
                if let (Some(b), Some(d)) = (b, grads.bias) {
                    out.push((*b, d));
                }
            }
            Op::Upsample { x, factor } => {
                out.push((*x, interp::upsample_backward(g, val(*x).shape(), *factor)));
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let (bsz, f, o) = (xs[0], xs[1], ws[0]);
                if rg(*x) {
                    let mut dx = vec![T::zero(); bsz * f];
                    T::gemm(bsz, o, f, T::one(), g, (o as isize, 1), val(*w).data(), (f as isize, 1), T::zero(), &mut dx, (f as isize, 1));
                    out.push((*x, dx));
                }
                if rg(*w) {
                    let mut dw = vec![T::zero(); o * f];
                    T::gemm(o, bsz, f, T::one(), g, (1, o as isize), val(*x).data(), (f as isize, 1), T::zero(), &mut dw, (f as isize, 1));
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|&b| rg(b)) {
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((b, db));
                }
            }
            Op::Act { x, kind } => {
                let xv = val(*x).data();
                let y = node.value.data();
                let d = g
                    .iter()
                    .zip(xv)
                    .zip(y)
                    .map(|((&g, &x), &y)| match kind {
                        Activation::Relu => {
                            if x > T::zero() {
                                g
                            } else {
                                T::zero()
                            }
                        }
                        Activation::LeakyRelu(a) => {
                            if x > T::zero() {
                                g
                            } else {
                                g * T::lit(*a)
                            }
                        }
                        Activation::Sigmoid => g * y * (T::one() - y),
                        Activation::Tanh => g * (T::one() - y * y),
                    })
                    .collect();
                out.push((*x, d));
            }
            Op::InstanceNorm { x, inv_std } => {
                let shape = node.value.shape();
                let plane: usize = shape[2..].iter().product();
                let n = T::lit(plane as f64);
                let mut dx = vec![T::zero(); g.len()];
                for (k, ((gy, y), d)) in g
                    .chunks(plane)
                    .zip(node.value.data().chunks(plane))
                    .zip(dx.chunks_mut(plane))
                    .enumerate()
                {
                    let mean_g = gy.iter().copied().sum::<T>() / n;
                    let mean_gy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for ((d, &gv), &yv) in d.iter_mut().zip(gy).zip(y) {
                        *d = inv_std[k] * (gv - mean_g - yv * mean_gy);
                    }
                }
                out.push((*x, dx));
            }
            Op::Reduce { x, kind } => {
                let xv = val(*x).data();
                let n = T::lit(xv.len() as f64);
                let g0 = g[0];
                let d = match kind {
                    Reduction::Sum => vec![g0; xv.len()],
                    Reduction::Mean => vec![g0 / n; xv.len()],
                    Reduction::L1 => xv
                        .iter()
                        .map(|&v| {
                            if v > T::zero() {
                                g0 / n
                            } else if v < T::zero() {
                                -g0 / n
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                    Reduction::SumSq => xv.iter().map(|&v| g0 * T::lit(2.0) * v).collect(),
                };
                out.push((*x, d));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, g.iter().zip(val(*b).data()).map(|(&g, &v)| g * v).collect()));
                }
                if rg(*b) {
                    out.push((*b, g.iter().zip(val(*a).data()).map(|(&g, &v)| g * v).collect()));
                }
            }
            Op::Scale { x, factor } => out.push((*x, g.iter().map(|&v| v * *factor).collect())),
            Op::Shift { x } => out.push((*x, g.to_vec())),
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = split_at_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &xi in xs {
                    let n = val(xi).shape()[*axis] * inner;
                    if rg(xi) {
                        let mut d = Vec::with_capacity(outer * n);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + n]);
                        }
                        out.push((xi, d));
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = val(*x).shape();
                let (outer, n, inner) = split_at_axis(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![T::zero(); val(*x).numel()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, d));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::SpatialMean { x } => {
                let plane: usize = val(*x).shape()[2..].iter().product();
                let scale = T::one() / T::lit(plane as f64);
                let d = g.iter().flat_map(|&v| std::iter::repeat_n(v * scale, plane)).collect();
                out.push((*x, d));
            }
            Op::GridSample { img, grid } => {
                let (di, dg) = interp::grid_sample_backward(
                    val(*img).data(),
                    val(*img).shape(),
                    val(*grid).data(),
                    val(*grid).shape(),
                    g,
                    rg(*img),
                    rg(*grid),
                );
                out.extend(di.map(|d| (*img, d)));
                out.extend(dg.map(|d| (*grid, d)));
            }
            Op::AffinePoints { theta, coords } => {
                let ts = val(*theta).shape();
                let (bsz, d) = (ts[0], ts[1]);
                let c = val(*coords).data();
                let th = val(*theta).data();
                let plane = c.len() / (bsz * d);
                if rg(*theta) {
                    let mut dt = vec![T::zero(); th.len()];
                    for b in 0..bsz {
                        for i in 0..d {
                            let gi = &g[(b * d + i) * plane..(b * d + i + 1) * plane];
                            let row = &mut dt[(b * d + i) * (d + 1)..(b * d + i + 1) * (d + 1)];
                            for j in 0..d {
                                let cj = &c[(b * d + j) * plane..(b * d + j + 1) * plane];
                                row[j] = gi.iter().zip(cj).map(|(&a, &b)| a * b).sum();
                            }
                            row[d] = gi.iter().copied().sum();
                        }
                    }
                    out.push((*theta, dt));
                }
                if rg(*coords) {
                    let mut dc = vec![T::zero(); c.len()];
                    for b in 0..bsz {
                        for i in 0..d {
                            let gi = &g[(b * d + i) * plane..(b * d + i + 1) * plane];
                            for j in 0..d {
                                let m = th[(b * d + i) * (d + 1) + j];
                                let dst = &mut dc[(b * d + j) * plane..(b * d + j + 1) * plane];
                                for (o, &v) in dst.iter_mut().zip(gi) {
                                    *o += m * v;
                                }
                            }
                        }
                    }
                    out.push((*coords, dc));
                }
            }
        }
        out
    }
}
