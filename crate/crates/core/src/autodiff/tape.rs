use std::sync::Arc;

use super::conv::{conv_backward, conv_forward, ConvShape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::forward_model::ForwardOperator;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Complex-linear maps between planar tensors. Images are `[2, h, w]`,
/// measurements `[2, coils * h, kept]`.
#[derive(Clone, Debug)]
pub enum LinearMap {
    Forward(Arc<ForwardOperator>),
    Adjoint(Arc<ForwardOperator>),
    /// `A^H A + lambda I`.
    Normal { op: Arc<ForwardOperator>, lambda: f64 },
}

impl LinearMap {
    fn operator(&self) -> &ForwardOperator {
        match self {
            LinearMap::Forward(op) | LinearMap::Adjoint(op) | LinearMap::Normal { op, .. } => op,
        }
    }

    fn input_shape(&self) -> Vec<usize> {
        let op = self.operator();
        match self {
            LinearMap::Adjoint(_) => vec![2, op.num_coils() * op.height(), op.mask().num_kept()],
            _ => vec![2, op.height(), op.width()],
        }
    }

    /// Hermitian adjoint, which is also the real transpose of the planar
    /// representation.
    pub fn adjoint(&self) -> LinearMap {
        match self {
            LinearMap::Forward(op) => LinearMap::Adjoint(op.clone()),
            LinearMap::Adjoint(op) => LinearMap::Forward(op.clone()),
            LinearMap::Normal { .. } => self.clone(),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let expected = self.input_shape();
        if x.shape() != expected.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "linear map expects {expected:?}, got {:?}",
                x.shape()
            )));
        }
        let op = self.operator();
        let v = x.to_complex()?;
        Ok(match self {
            LinearMap::Forward(_) => Tensor::from_complex(
                op.num_coils() * op.height(),
                op.mask().num_kept(),
                &op.forward_raw(&v),
            ),
            LinearMap::Adjoint(_) => Tensor::from_complex(op.height(), op.width(), &op.adjoint_raw(&v)),
            LinearMap::Normal { lambda, .. } => {
                let mut out = op.normal_raw(&v);
                for (o, xv) in out.iter_mut().zip(&v) {
                    *o += lambda * xv;
                }
                Tensor::from_complex(op.height(), op.width(), &out)
            }
        })
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, shape: ConvShape },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// `a + sign * s * b` with scalar `s`.
    AddScaled { a: Var, s: Var, b: Var, sign: f64 },
    Dot(Var, Var),
    Div(Var, Var),
    Concat(Vec<Var>),
    Linear { x: Var, map: LinearMap },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one reverse-mode sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    bytes: usize,
    cap: Option<usize>,
}

/// Gradients indexed by [`Var`]; only variables that require gradients
/// receive an entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that refuses to hold more than `bytes` of recorded values.
    pub fn with_memory_cap(bytes: usize) -> Self {
        Self { cap: Some(bytes), ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values.
    pub fn memory(&self) -> usize {
        self.bytes
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let needed = self.bytes + value.len() * std::mem::size_of::<f64>();
        if let Some(cap) = self.cap {
            if needed > cap {
                return Err(Error::TapeMemory { needed, cap });
            }
        }
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite value recorded on tape".into()));
        }
        self.bytes = needed;
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        self.value(a).ensure_same_shape(self.value(b))
    }

    fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.len() != 1 {
            return Err(Error::DimensionMismatch(format!("expected a scalar, got {:?}", t.shape())));
        }
        Ok(t.item())
    }

    /// Same-padded convolution of `[c_in, h, w]` with weight
    /// `[c_out, c_in, k, k]` and bias `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || ws[2] % 2 == 0 || bs != [ws[0]] {
            return Err(Error::DimensionMismatch(format!(
                "conv2d input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let shape = ConvShape { c_in: xs[0], c_out: ws[0], h: xs[1], w: xs[2], k: ws[2] };
        let out = conv_forward(shape, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::new(vec![shape.c_out, shape.h, shape.w], out)?;
        let rg = self.rg(&[x, w, b]);
        self.push(value, Op::Conv { x, w, b, shape }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let value = self.value(a).axpy(1.0, self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let value = self.value(a).axpy(-1.0, self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let value = self.value(x).scale(s);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// `a + s * b` for a recorded scalar `s`.
    pub fn add_scaled(&mut self, a: Var, s: Var, b: Var) -> Result<Var> {
        self.add_scaled_signed(a, s, b, 1.0)
    }

    /// `a - s * b` for a recorded scalar `s`.
    pub fn sub_scaled(&mut self, a: Var, s: Var, b: Var) -> Result<Var> {
        self.add_scaled_signed(a, s, b, -1.0)
    }

    fn add_scaled_signed(&mut self, a: Var, s: Var, b: Var, sign: f64) -> Result<Var> {
        self.same_shape(a, b)?;
        let sv = self.scalar(s)?;
        let value = self.value(a).axpy(sign * sv, self.value(b));
        let rg = self.rg(&[a, s, b]);
        self.push(value, Op::AddScaled { a, s, b, sign }, rg)
    }

    /// `a + s * b` for a constant `s`.
    pub fn add_scaled_const(&mut self, a: Var, s: f64, b: Var) -> Result<Var> {
        let sb = self.scale(b, s)?;
        self.add(a, sb)
    }

    /// Real inner product, i.e. the real part of the Hermitian product of
    /// planar complex tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let value = Tensor::scalar(self.value(a).dot(self.value(b)));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Dot(a, b), rg)
    }

    /// Quotient of two scalars.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.scalar(a)?, self.scalar(b)?);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(av / bv), Op::Div(a, b), rg)
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::InvalidInput("empty concat".into()))?);
        let tail = first.shape()[1..].to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::DimensionMismatch(format!("concat of {:?} onto {tail:?}", t.shape())));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![channels];
        shape.extend(tail);
        let rg = self.rg(parts);
        self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg)
    }

    pub fn linear(&mut self, x: Var, map: LinearMap) -> Result<Var> {
        let value = map.apply(self.value(x))?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Linear { x, map }, rg)
    }

    /// `||a - b||^2`.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.dot(d, d)
    }

    /// Reverse sweep from `output` seeded with `seed`. A tape supports a
    /// single sweep.
    pub fn backward(&mut self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.value(output).ensure_same_shape(&seed)?;
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed);
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, shape } => {
                let need_x = self.requires_grad(*x);
                let need_p = self.requires_grad(*w) || self.requires_grad(*b);
                let (dx, dw, db) =
                    conv_backward(*shape, self.value(*x).data(), self.value(*w).data(), g.data(), need_x, need_p);
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), dx)?);
                }
                if let (Some(dw), Some(db)) = (dw, db) {
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape().to_vec(), dw)?);
                    self.accumulate(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
                }
            }
            Op::Relu(x) => {
                let mut gx = g;
                for (gv, &o) in gx.data_mut().iter_mut().zip(out.data()) {
                    if o <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, g.scale(-1.0));
                self.accumulate(grads, *a, g);
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s)),
            Op::AddScaled { a, s, b, sign } => {
                let sv = self.value(*s).item();
                if self.requires_grad(*s) {
                    self.accumulate(grads, *s, Tensor::scalar(sign * g.dot(self.value(*b))));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.scale(sign * sv));
                }
                self.accumulate(grads, *a, g);
            }
            Op::Dot(a, b) => {
                let gs = g.item();
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, self.value(*b).scale(gs));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.value(*a).scale(gs));
                }
            }
            Op::Div(a, b) => {
                let (av, bv, gs) = (self.value(*a).item(), self.value(*b).item(), g.item());
                self.accumulate(grads, *a, Tensor::scalar(gs / bv));
                self.accumulate(grads, *b, Tensor::scalar(-gs * av / (bv * bv)));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let n: usize = shape.iter().product();
                    if self.requires_grad(*p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, *p, Tensor::new(shape, slice)?);
                    }
                    offset += n;
                }
            }
            Op::Linear { x, map } => {
                if self.requires_grad(*x) {
                    let gx = map.adjoint().apply(&g)?;
                    self.accumulate(grads, *x, gx);
                }
            }
        }
        Ok(())
    }
}
