use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, Broadcast, MatMulPlan};
use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp<T> {
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    Silu,
    Sigmoid,
    Softplus,
    Tanh,
    Sin,
    Cos,
    Scale(T),
    Shift(T),
    Powf(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Gradient goes to the first maximal element (lowest flat index).
    Max,
}

/// A fused operation with a hand-written backward pass. The forward value is
/// computed by the caller and handed to [`Tape::custom`].
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product. `needs[i]` says whether input `i` wants a
    /// gradient; entries for inputs that do not may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

enum GradFn<T: Real> {
    Unary { input: Var, op: UnaryOp<T> },
    Binary { lhs: Var, rhs: Var, op: BinaryOp },
    MatMul { lhs: Var, rhs: Var },
    Reduce { input: Var, op: ReduceOp, axes: Vec<usize>, argmax: Vec<usize> },
    Reshape { input: Var },
    Permute { input: Var, perm: Vec<usize> },
    Gather { input: Var, axis: usize, indices: Arc<[usize]> },
    ScatterAdd { input: Var, axis: usize, indices: Arc<[usize]> },
    Concat { inputs: Vec<Var>, axis: usize },
    LayerNorm {
        input: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        axis: usize,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad_fn: Option<GradFn<T>>,
    requires_grad: bool,
}

/// Recording context for differentiable computation.
///
/// Values are immutable once recorded. The graph is acyclic by construction
/// (an op can only reference earlier nodes) and a backward pass visits each
/// node once, in reverse recording order.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    grad_enabled: bool,
    strict: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], kept for leaves only.
pub struct Gradients<T> {
    by_node: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.by_node.get(var.0).and_then(|g| g.as_deref())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), grad_enabled: true, strict: false }
    }

    /// A tape that records values only; nothing on it can be differentiated.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// In strict mode `log` and `sqrt` of negative inputs are errors rather
    /// than NaN.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.grad_enabled
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], grad_fn: impl FnOnce() -> GradFn<T>) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let grad_fn = if requires_grad { Some(grad_fn()) } else { None };
        self.nodes.push(Node { value, grad_fn, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node { value, grad_fn: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Binds a stored parameter. Trainable parameters become gradient leaves
    /// and are credited by [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let var = self.push_leaf(p.value.clone(), p.trainable);
        if self.nodes[var.0].requires_grad {
            self.params.push((id, var));
        }
        var
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp<T>, a: Var) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if self.strict {
            let name = match op {
                UnaryOp::Log => Some("log"),
                UnaryOp::Sqrt => Some("sqrt"),
                _ => None,
            };
            if let Some(name) = name {
                if let Some(bad) = x.data().iter().find(|v| **v < T::zero()) {
                    return Err(Error::domain(name, format!("negative input {bad}")));
                }
            }
        }
        let f = unary_fn(op);
        let out = x.map(f);
        Ok(self.push(out, &[a], || GradFn::Unary { input: a, op }))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let plan = Broadcast::new(binary_name(op), xa.shape(), xb.shape())?;
        let (da, db) = (xa.data(), xb.data());
        let mut out = vec![T::zero(); plan.numel()];
        macro_rules! run {
            ($f:expr) => {{
                let f = $f;
                if plan.is_same() {
                    for ((o, &p), &q) in out.iter_mut().zip(da).zip(db) {
                        *o = f(p, q);
                    }
                } else {
                    plan.for_each(|o, ia, ib| out[o] = f(da[ia], db[ib]));
                }
            }};
        }
        match op {
            BinaryOp::Add => run!(|p: T, q: T| p + q),
            BinaryOp::Sub => run!(|p: T, q: T| p - q),
            BinaryOp::Mul => run!(|p: T, q: T| p * q),
            BinaryOp::Div => run!(|p: T, q: T| p / q),
            BinaryOp::Pow => run!(|p: T, q: T| p.powf(q)),
        }
        let value = Tensor::new(plan.out.clone(), out)?;
        Ok(self.push(value, &[a, b], || GradFn::Binary { lhs: a, rhs: b, op }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn pow(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Pow, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Silu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.unary(UnaryOp::Scale(factor), a)
    }

    pub fn add_scalar(&mut self, a: Var, shift: T) -> Result<Var> {
        self.unary(UnaryOp::Shift(shift), a)
    }

    pub fn powf(&mut self, a: Var, exponent: T) -> Result<Var> {
        self.unary(UnaryOp::Powf(exponent), a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[.., m, k] x b[.., k, n]` with broadcasting over leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let plan = MatMulPlan::new(xa.shape(), xb.shape())?;
        let out = plan.forward(xa.data(), xb.data());
        let value = Tensor::new(plan.out.clone(), out)?;
        Ok(self.push(value, &[a, b], || GradFn::MatMul { lhs: a, rhs: b }))
    }

    /// `x @ w (+ bias)` for `x[.., in]`, `w[in, out]`, `bias[out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ---- reductions -----------------------------------------------------

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axes: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let axes = kernels::normalize_axes("reduce", x.rank(), axes)?;
        if axes.is_empty() {
            return self.reshape(a, x.shape().to_vec());
        }
        let out_shape = kernels::reduce_out_shape(x.shape(), &axes);
        let map = kernels::reduce_strides(x.shape(), &axes);
        let out_len: usize = out_shape.iter().product();
        let data = x.data();
        let zeros = vec![0; map.len()];
        let mut argmax = Vec::new();
        let out = match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut out = vec![T::zero(); out_len];
                kernels::walk2(x.shape(), &map, &zeros, |lin, o, _| out[o] += data[lin]);
                if op == ReduceOp::Mean {
                    let count = T::from_usize(x.numel() / out_len.max(1)).unwrap();
                    for v in &mut out {
                        *v /= count;
                    }
                }
                out
            }
            ReduceOp::Max => {
                let mut out = vec![T::neg_infinity(); out_len];
                argmax = vec![usize::MAX; out_len];
                kernels::walk2(x.shape(), &map, &zeros, |lin, o, _| {
                    // Strict comparison keeps the lowest flat index on ties.
                    if argmax[o] == usize::MAX || data[lin] > out[o] {
                        out[o] = data[lin];
                        argmax[o] = lin;
                    }
                });
                out
            }
        };
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, &[a], || GradFn::Reduce { input: a, op, axes, argmax }))
    }

    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, axes)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, axes)
    }

    pub fn max(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceOp::Max, a, axes)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.sum(a, &axes)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.mean(a, &axes)
    }

    // ---- shape manipulation ---------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = Tensor::new(shape, self.nodes[a.0].value.data().to_vec())?;
        Ok(self.push(value, &[a], || GradFn::Reshape { input: a }))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..x.rank()).collect::<Vec<_>>() {
            return Err(Error::dim("permute", format!("{:?} is not a permutation of rank {}", perm, x.rank())));
        }
        let (shape, data) = kernels::permute(x.shape(), x.data(), perm);
        let value = Tensor::new(shape, data)?;
        let perm = perm.to_vec();
        Ok(self.push(value, &[a], || GradFn::Permute { input: a, perm }))
    }

    /// Selects `indices` (repeats allowed) along `axis`.
    pub fn gather(&mut self, a: Var, axis: usize, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        let indices: Arc<[usize]> = indices.into();
        let x = &self.nodes[a.0].value;
        if axis >= x.rank() {
            return Err(Error::dim("gather", format!("axis {axis} out of range for rank {}", x.rank())));
        }
        let size = x.shape()[axis];
        if let Some(bad) = indices.iter().find(|&&i| i >= size) {
            return Err(Error::dim("gather", format!("index {bad} out of range {size}")));
        }
        let data = kernels::gather(x.shape(), x.data(), axis, &indices);
        let mut shape = x.shape().to_vec();
        shape[axis] = indices.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, &[a], || GradFn::Gather { input: a, axis, indices }))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(a, axis, idx)
    }

    pub fn flip(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(0);
        let idx: Vec<usize> = (0..n).rev().collect();
        self.gather(a, axis, idx)
    }

    /// Adjoint of [`Tape::gather`]: sums slices into positions `indices`
    /// of an output with `out_len` entries along `axis`.
    pub fn scatter_add(
        &mut self,
        a: Var,
        axis: usize,
        indices: impl Into<Arc<[usize]>>,
        out_len: usize,
    ) -> Result<Var> {
        let indices: Arc<[usize]> = indices.into();
        let x = &self.nodes[a.0].value;
        if axis >= x.rank() || x.shape()[axis] != indices.len() {
            return Err(Error::dim("scatter_add", format!("{} indices for shape {:?}", indices.len(), x.shape())));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= out_len) {
            return Err(Error::dim("scatter_add", format!("index {bad} out of range {out_len}")));
        }
        let data = kernels::scatter_add(x.shape(), x.data(), axis, &indices, out_len);
        let mut shape = x.shape().to_vec();
        shape[axis] = out_len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, &[a], || GradFn::ScatterAdd { input: a, axis, indices }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (p, q))| i == axis || p == q);
            if !compatible {
                return Err(Error::dim("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let (pre, _, post) = kernels::split3(&base, axis);
        let mut data = Vec::with_capacity(pre * total * post);
        for p in 0..pre {
            for v in inputs {
                let x = self.value(*v);
                let chunk = x.shape()[axis] * post;
                data.extend_from_slice(&x.data()[p * chunk..(p + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let inputs_v = inputs.to_vec();
        Ok(self.push(value, inputs, || GradFn::Concat { inputs: inputs_v, axis }))
    }

    // ---- normalization --------------------------------------------------

    /// Zero-mean, unit-variance normalization along `axis`, followed by the
    /// optional per-position affine `gamma * x + beta` (both of length
    /// `shape[axis]`).
    pub fn layer_norm(
        &mut self,
        a: Var,
        axis: usize,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: T,
    ) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::Contract(String::from("layer_norm eps must be positive")));
        }
        let x = &self.nodes[a.0].value;
        if axis >= x.rank() {
            return Err(Error::dim("layer_norm", format!("axis {axis} out of range")));
        }
        let size = x.shape()[axis];
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [size] {
                return Err(Error::dim("layer_norm", format!("affine shape {:?}, expected [{size}]", self.shape(p))));
            }
        }
        let g = gamma.map(|v| self.nodes[v.0].value.data());
        let b = beta.map(|v| self.nodes[v.0].value.data());
        let (out, normalized, rstd) = kernels::layer_norm_forward(x.shape(), x.data(), axis, g, b, eps);
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let mut inputs = vec![a];
        inputs.extend(gamma);
        inputs.extend(beta);
        Ok(self.push(value, &inputs, || GradFn::LayerNorm { input: a, gamma, beta, axis, normalized, rstd }))
    }

    // ---- fused ops ------------------------------------------------------

    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let inputs_v = inputs.to_vec();
        self.push(output, inputs, move || GradFn::Custom { inputs: inputs_v, op })
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Returns gradients of every leaf
    /// reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.grad_fn {
                None => leaves[i] = Some(g),
                Some(f) => self.apply(f, &node.value, g, &mut grads)?,
            }
        }
        Ok(Gradients { by_node: leaves })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    /// Repeated calls accumulate until [`ParamStore::zero_grad`].
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for &(id, var) in &self.params {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn apply(&self, f: &GradFn<T>, out: &Tensor<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match f {
            GradFn::Unary { input, op } => {
                let x = self.value(*input).data();
                let y = out.data();
                let dx = unary_backward(*op, x, y, &g);
                accumulate(&mut grads[input.0], dx);
            }
            GradFn::Binary { lhs, rhs, op } => {
                let (xa, xb) = (self.value(*lhs), self.value(*rhs));
                let plan = Broadcast::new("binary", xa.shape(), xb.shape())?;
                let (ga, gb) = binary_backward(*op, &plan, xa.data(), xb.data(), out.data(), &g, self.wants(*lhs), self.wants(*rhs));
                if let Some(ga) = ga {
                    accumulate(&mut grads[lhs.0], ga);
                }
                if let Some(gb) = gb {
                    accumulate(&mut grads[rhs.0], gb);
                }
            }
            GradFn::MatMul { lhs, rhs } => {
                let (xa, xb) = (self.value(*lhs), self.value(*rhs));
                let plan = MatMulPlan::new(xa.shape(), xb.shape())?;
                if self.wants(*lhs) {
                    let ga = plan.grad_lhs(&g, xb.data(), xa.numel());
                    accumulate(&mut grads[lhs.0], ga);
                }
                if self.wants(*rhs) {
                    let gb = plan.grad_rhs(&g, xa.data(), xb.numel());
                    accumulate(&mut grads[rhs.0], gb);
                }
            }
            GradFn::Reduce { input, op, axes, argmax } => {
                let x = self.value(*input);
                let mut dx = vec![T::zero(); x.numel()];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let map = kernels::reduce_strides(x.shape(), axes);
                        let zeros = vec![0; map.len()];
                        let scale = if *op == ReduceOp::Mean {
                            T::one() / T::from_usize(x.numel() / g.len().max(1)).unwrap()
                        } else {
                            T::one()
                        };
                        kernels::walk2(x.shape(), &map, &zeros, |lin, o, _| dx[lin] = g[o] * scale);
                    }
                    ReduceOp::Max => {
                        for (o, &src) in argmax.iter().enumerate() {
                            if src != usize::MAX {
                                dx[src] += g[o];
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.0], dx);
            }
            GradFn::Reshape { input } => accumulate(&mut grads[input.0], g),
            GradFn::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (_, dx) = kernels::permute(out.shape(), &g, &inverse);
                accumulate(&mut grads[input.0], dx);
            }
            GradFn::Gather { input, axis, indices } => {
                let len = self.value(*input).shape()[*axis];
                let dx = kernels::scatter_add(out.shape(), &g, *axis, indices, len);
                accumulate(&mut grads[input.0], dx);
            }
            GradFn::ScatterAdd { input, axis, indices } => {
                let dx = kernels::gather(out.shape(), &g, *axis, indices);
                accumulate(&mut grads[input.0], dx);
            }
            GradFn::Concat { inputs, axis } => {
                let (pre, total, post) = kernels::split3(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let n = self.shape(*v)[*axis];
                    if self.wants(*v) {
                        let mut dx = Vec::with_capacity(pre * n * post);
                        for p in 0..pre {
                            let start = (p * total + offset) * post;
                            dx.extend_from_slice(&g[start..start + n * post]);
                        }
                        accumulate(&mut grads[v.0], dx);
                    }
                    offset += n;
                }
            }
            GradFn::LayerNorm { input, gamma, beta, axis, normalized, rstd } => {
                let gdata = gamma.map(|v| self.value(v).data());
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_backward(out.shape(), &g, *axis, normalized, rstd, gdata);
                if self.wants(*input) {
                    accumulate(&mut grads[input.0], dx);
                }
                if let Some(v) = gamma.filter(|v| self.wants(*v)) {
                    accumulate(&mut grads[v.0], dgamma);
                }
                if let Some(v) = beta.filter(|v| self.wants(*v)) {
                    accumulate(&mut grads[v.0], dbeta);
                }
            }
            GradFn::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.wants(*v)).collect();
                let results = op.backward(&values, out, &g, &needs)?;
                if results.len() != inputs.len() {
                    return Err(Error::Contract(format!("{} returned {} gradients for {} inputs", op.name(), results.len(), inputs.len())));
                }
                for ((v, r), need) in inputs.iter().zip(results).zip(needs) {
                    if let (Some(r), true) = (r, need) {
                        if r.len() != self.value(*v).numel() {
                            return Err(Error::Contract(format!("{} produced a gradient of the wrong size", op.name())));
                        }
                        accumulate(&mut grads[v.0], r);
                    }
                }
            }
        }
        Ok(())
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Pow => "pow",
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn unary_fn<T: Real>(op: UnaryOp<T>) -> impl Fn(T) -> T {
    move |x: T| match op {
        UnaryOp::Neg => -x,
        UnaryOp::Exp => x.exp(),
        UnaryOp::Log => x.ln(),
        UnaryOp::Sqrt => x.sqrt(),
        UnaryOp::Abs => x.abs(),
        UnaryOp::Silu => x * sigmoid(x),
        UnaryOp::Sigmoid => sigmoid(x),
        UnaryOp::Softplus => softplus(x),
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Scale(c) => x * c,
        UnaryOp::Shift(c) => x + c,
        UnaryOp::Powf(p) => x.powf(p),
    }
}

fn unary_backward<T: Real>(op: UnaryOp<T>, x: &[T], y: &[T], g: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    let d = |i: usize| -> T {
        let (x, y) = (x[i], y[i]);
        match op {
            UnaryOp::Neg => -T::one(),
            UnaryOp::Exp => y,
            UnaryOp::Log => T::one() / x,
            UnaryOp::Sqrt => half / y,
            UnaryOp::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            UnaryOp::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            UnaryOp::Sigmoid => y * (T::one() - y),
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Tanh => T::one() - y * y,
            UnaryOp::Sin => x.cos(),
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Scale(c) => c,
            UnaryOp::Shift(_) => T::one(),
            UnaryOp::Powf(p) => p * x.powf(p - T::one()),
        }
    };
    (0..g.len()).map(|i| g[i] * d(i)).collect()
}

#[allow(clippy::too_many_arguments)]
fn binary_backward<T: Real>(
    op: BinaryOp,
    plan: &Broadcast,
    a: &[T],
    b: &[T],
    out: &[T],
    g: &[T],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut ga = if want_a { Some(vec![T::zero(); a.len()]) } else { None };
    let mut gb = if want_b { Some(vec![T::zero(); b.len()]) } else { None };
    let partials = |o: usize, ia: usize, ib: usize| -> (T, T) {
        let (p, q) = (a[ia], b[ib]);
        match op {
            BinaryOp::Add => (T::one(), T::one()),
            BinaryOp::Sub => (T::one(), -T::one()),
            BinaryOp::Mul => (q, p),
            BinaryOp::Div => (T::one() / q, -p / (q * q)),
            BinaryOp::Pow => {
                let da = if q == T::zero() { T::zero() } else { q * p.powf(q - T::one()) };
                let db = if want_b { out[o] * p.ln() } else { T::zero() };
                (da, db)
            }
        }
    };
    plan.for_each(|o, ia, ib| {
        let (da, db) = partials(o, ia, ib);
        if let Some(ga) = ga.as_mut() {
            ga[ia] += g[o] * da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[ib] += g[o] * db;
        }
    });
    (ga, gb)
}
