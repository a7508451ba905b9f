//! Forward and backward kernels on raw buffers. The tape owns graph
//! bookkeeping; everything here is plain array arithmetic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::strides_of;
use crate::{Error, Real, Result};

/// Walks a row-major index space, reporting the linear index together with
/// offsets under two independent stride sets.
pub(crate) fn walk2(
    shape: &[usize],
    s1: &[usize],
    s2: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if shape.contains(&0) {
        return;
    }
    let inner = shape[rank - 1];
    let (i1, i2) = (s1[rank - 1], s2[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut base1, mut base2, mut lin) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..inner {
            f(lin + j, base1 + j * i1, base2 + j * i2);
        }
        lin += inner;
        // Advance the odometer over the outer dimensions.
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            base1 += s1[d];
            base2 += s2[d];
            if idx[d] < shape[d] {
                break;
            }
            base1 -= s1[d] * shape[d];
            base2 -= s2[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Trailing-dimension broadcast plan for a binary elementwise op.
pub(crate) struct Broadcast {
    pub out: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Broadcast {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self { out: a.to_vec(), a_strides: vec![], b_strides: vec![], same: true });
        }
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        let mut a_strides = vec![0; rank];
        let mut b_strides = vec![0; rank];
        let (sa, sb) = (strides_of(a), strides_of(b));
        for i in 0..rank {
            let da = if i + a.len() >= rank { Some(i + a.len() - rank) } else { None };
            let db = if i + b.len() >= rank { Some(i + b.len() - rank) } else { None };
            let na = da.map_or(1, |d| a[d]);
            let nb = db.map_or(1, |d| b[d]);
            let n = if na == nb || nb == 1 {
                na
            } else if na == 1 {
                nb
            } else {
                return Err(Error::dim(op, format!("cannot broadcast {:?} with {:?}", a, b)));
            };
            out[i] = n;
            if let Some(d) = da {
                if na == n && n != 1 {
                    a_strides[i] = sa[d];
                }
            }
            if let Some(d) = db {
                if nb == n && n != 1 {
                    b_strides[i] = sb[d];
                }
            }
        }
        Ok(Self { out, a_strides, b_strides, same: false })
    }

    pub fn numel(&self) -> usize {
        self.out.iter().product()
    }

    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        if self.same {
            for i in 0..self.numel() {
                f(i, i, i);
            }
        } else {
            walk2(&self.out, &self.a_strides, &self.b_strides, f);
        }
    }

    pub fn is_same(&self) -> bool {
        self.same
    }
}

pub(crate) fn reduce_out_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &n)| n).collect()
}

/// Stride map sending an input position to its reduced output position.
pub(crate) fn reduce_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape = reduce_out_shape(shape, axes);
    let out_strides = strides_of(&out_shape);
    let mut map = vec![0; shape.len()];
    let mut k = 0;
    for (i, m) in map.iter_mut().enumerate() {
        if !axes.contains(&i) {
            *m = out_strides[k];
            k += 1;
        }
    }
    map
}

pub(crate) fn normalize_axes(op: &'static str, rank: usize, axes: &[usize]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = axes.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&a| a >= rank) {
        return Err(Error::dim(op, format!("axis {bad} out of range for rank {rank}")));
    }
    Ok(out)
}

/// Batched matmul geometry: `a[.., m, k] x b[.., k, n]`.
pub(crate) struct MatMulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out: Vec<usize>,
    batch: Vec<usize>,
    a_batch_strides: Vec<usize>,
    b_batch_strides: Vec<usize>,
    /// `b` is a plain matrix: fold every leading dim of `a` into `m`.
    flat: bool,
}

impl MatMulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::dim("matmul", format!("need rank >= 2, got {:?} and {:?}", a, b)));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner dimensions differ: {:?} x {:?}", a, b)));
        }
        let a_lead = &a[..a.len() - 2];
        let b_lead = &b[..b.len() - 2];
        if b_lead.len() <= a_lead.len() && b_lead.iter().all(|&d| d == 1) {
            let mut out = a_lead.to_vec();
            out.extend_from_slice(&[m, n]);
            let rows = a_lead.iter().product::<usize>() * m;
            return Ok(Self {
                m: rows,
                k,
                n,
                out,
                batch: vec![],
                a_batch_strides: vec![],
                b_batch_strides: vec![],
                flat: true,
            });
        }
        let bc = Broadcast::new("matmul", a_lead, b_lead)?;
        let batch = bc.out.clone();
        let rank = batch.len();
        let pad = |lead: &[usize], mat: usize| -> Vec<usize> {
            let s = strides_of(lead);
            let mut v = vec![0; rank];
            for (i, slot) in v.iter_mut().enumerate() {
                if i + lead.len() >= rank {
                    let d = i + lead.len() - rank;
                    if lead[d] != 1 {
                        *slot = s[d] * mat;
                    }
                }
            }
            v
        };
        let a_batch_strides = pad(a_lead, m * k);
        let b_batch_strides = pad(b_lead, k * n);
        let mut out = batch.clone();
        out.extend_from_slice(&[m, n]);
        Ok(Self { m, k, n, out, batch, a_batch_strides, b_batch_strides, flat: false })
    }

    fn for_each_batch(&self, mut f: impl FnMut(usize, usize, usize)) {
        if self.flat {
            f(0, 0, 0);
        } else {
            walk2(&self.batch, &self.a_batch_strides, &self.b_batch_strides, |lin, oa, ob| {
                f(lin * self.m * self.n, oa, ob)
            });
        }
    }

    pub fn forward<T: Real>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![T::zero(); self.out.iter().product()];
        self.for_each_batch(|oc, oa, ob| {
            T::gemm(m, k, n, &a[oa..], (k, 1), &b[ob..], (n, 1), &mut out[oc..], false);
        });
        out
    }

    pub fn grad_lhs<T: Real>(&self, g: &[T], b: &[T], a_len: usize) -> Vec<T> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut ga = vec![T::zero(); a_len];
        self.for_each_batch(|oc, oa, ob| {
            // ga[m,k] += g[m,n] * b^T[n,k]
            T::gemm(m, n, k, &g[oc..], (n, 1), &b[ob..], (1, n), &mut ga[oa..], true);
        });
        ga
    }

    pub fn grad_rhs<T: Real>(&self, g: &[T], a: &[T], b_len: usize) -> Vec<T> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut gb = vec![T::zero(); b_len];
        self.for_each_batch(|oc, oa, ob| {
            // gb[k,n] += a^T[k,m] * g[m,n]
            T::gemm(k, m, n, &a[oa..], (1, k), &g[oc..], (n, 1), &mut gb[ob..], true);
        });
        gb
    }
}

pub(crate) fn permute<T: Real>(shape: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); data.len()];
    let zero = vec![0; out_shape.len()];
    walk2(&out_shape, &src_strides, &zero, |lin, src, _| out[lin] = data[src]);
    (out_shape, out)
}

pub(crate) fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

pub(crate) fn gather<T: Real>(shape: &[usize], data: &[T], axis: usize, idx: &[usize]) -> Vec<T> {
    let (pre, size, post) = split3(shape, axis);
    let mut out = Vec::with_capacity(pre * idx.len() * post);
    for p in 0..pre {
        let base = p * size * post;
        for &i in idx {
            out.extend_from_slice(&data[base + i * post..base + (i + 1) * post]);
        }
    }
    out
}

/// `out[.., idx[i], ..] += src[.., i, ..]` with `out` having `out_len` along
/// `axis`. `shape` is the shape of `src`.
pub(crate) fn scatter_add<T: Real>(
    shape: &[usize],
    src: &[T],
    axis: usize,
    idx: &[usize],
    out_len: usize,
) -> Vec<T> {
    let (pre, size, post) = split3(shape, axis);
    debug_assert_eq!(size, idx.len());
    let mut out = vec![T::zero(); pre * out_len * post];
    for p in 0..pre {
        let sbase = p * size * post;
        let obase = p * out_len * post;
        for (i, &dst) in idx.iter().enumerate() {
            let s = &src[sbase + i * post..sbase + (i + 1) * post];
            let o = &mut out[obase + dst * post..obase + (dst + 1) * post];
            for (o, &s) in o.iter_mut().zip(s) {
                *o += s;
            }
        }
    }
    out
}

/// Layer normalization along `axis` with optional affine parameters.
/// Returns `(output, normalized, rstd)`.
pub(crate) fn layer_norm_forward<T: Real>(
    shape: &[usize],
    x: &[T],
    axis: usize,
    gamma: Option<&[T]>,
    beta: Option<&[T]>,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (pre, size, post) = split3(shape, axis);
    let inv_n = T::one() / T::from_usize(size).unwrap();
    let mut normalized = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); pre * post];
    for p in 0..pre {
        for q in 0..post {
            let at = |a: usize| p * size * post + a * post + q;
            let mut mean = T::zero();
            for a in 0..size {
                mean += x[at(a)];
            }
            mean *= inv_n;
            let mut var = T::zero();
            for a in 0..size {
                let d = x[at(a)] - mean;
                var += d * d;
            }
            var *= inv_n;
            let r = T::one() / (var + eps).sqrt();
            rstd[p * post + q] = r;
            for a in 0..size {
                normalized[at(a)] = (x[at(a)] - mean) * r;
            }
        }
    }
    let mut out = normalized.clone();
    if gamma.is_some() || beta.is_some() {
        for (i, o) in out.iter_mut().enumerate() {
            let a = (i / post) % size;
            if let Some(g) = gamma {
                *o *= g[a];
            }
            if let Some(b) = beta {
                *o += b[a];
            }
        }
    }
    (out, normalized, rstd)
}

/// Gradients of layer normalization: `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<T: Real>(
    shape: &[usize],
    g: &[T],
    axis: usize,
    normalized: &[T],
    rstd: &[T],
    gamma: Option<&[T]>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (pre, size, post) = split3(shape, axis);
    let inv_n = T::one() / T::from_usize(size).unwrap();
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); size];
    let mut dbeta = vec![T::zero(); size];
    for p in 0..pre {
        for q in 0..post {
            let at = |a: usize| p * size * post + a * post + q;
            let r = rstd[p * post + q];
            let mut mean_g = T::zero();
            let mut mean_gy = T::zero();
            for a in 0..size {
                let i = at(a);
                dgamma[a] += g[i] * normalized[i];
                dbeta[a] += g[i];
                let gi = gamma.map_or(g[i], |gm| g[i] * gm[a]);
                mean_g += gi;
                mean_gy += gi * normalized[i];
            }
            mean_g *= inv_n;
            mean_gy *= inv_n;
            for a in 0..size {
                let i = at(a);
                let gi = gamma.map_or(g[i], |gm| g[i] * gm[a]);
                dx[i] = r * (gi - mean_g - normalized[i] * mean_gy);
            }
        }
    }
    (dx, dgamma, dbeta)
}
