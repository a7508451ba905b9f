//! Selective state-space scan.
//!
//! For each channel the recurrence is `h_l = ā_l ⊙ h_{l-1} + b̄_l u_l`,
//! `y_l = ⟨c_l, h_l⟩ + d·u_l` with `h_0 = 0`, where `ā = exp(Δa)` and
//! `b̄ = (ā - 1)/a · b` (zero-order hold on a diagonal, negative `a`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

pub(crate) mod kernel;
mod ops;

pub use ops::{causal_depthwise_conv, selective_scan};

/// Which scan runs the forward recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanImpl {
    #[default]
    Sequential,
    Parallel,
}

/// Parameters of one selective scan.
///
/// `a` is either `[d_state]` (shared by every channel) or
/// `[d_inner, d_state]`; `delta` is `[batch, len, d_inner]`; `b` and `c` are
/// `[batch, len, d_state]`; `d_skip` is `[d_inner]`.
#[derive(Clone, Debug)]
pub struct SsmParams<T> {
    pub a: Tensor<T>,
    pub delta: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub d_skip: Tensor<T>,
}

impl<T: Real> SsmParams<T> {
    fn dims(&self, u: &Tensor<T>) -> Result<kernel::Dims> {
        let &[batch, len, d_inner] = u.shape() else {
            return Err(Error::dim("scan", format!("input must be [batch, len, d_inner], got {:?}", u.shape())));
        };
        let d_state = *self.a.shape().last().ok_or_else(|| Error::dim("scan", "a must not be a scalar"))?;
        let a_ok = self.a.shape() == [d_state] || self.a.shape() == [d_inner, d_state];
        if !a_ok {
            return Err(Error::dim("scan", format!("a has shape {:?}", self.a.shape())));
        }
        if self.delta.shape() != u.shape() {
            return Err(Error::dim("scan", format!("delta {:?} vs input {:?}", self.delta.shape(), u.shape())));
        }
        for (name, t) in [("b", &self.b), ("c", &self.c)] {
            if t.shape() != [batch, len, d_state] {
                return Err(Error::dim("scan", format!("{name} has shape {:?}", t.shape())));
            }
        }
        if self.d_skip.shape() != [d_inner] {
            return Err(Error::dim("scan", format!("d_skip has shape {:?}", self.d_skip.shape())));
        }
        Ok(kernel::Dims { batch, len, d_inner, d_state })
    }

    /// `a` laid out as `[d_inner, d_state]`.
    fn a_full(&self, d_inner: usize) -> Vec<T> {
        if self.a.rank() == 1 {
            let mut out = Vec::with_capacity(d_inner * self.a.numel());
            for _ in 0..d_inner {
                out.extend_from_slice(self.a.data());
            }
            out
        } else {
            self.a.data().to_vec()
        }
    }

    /// Checks the stability constraints: every `Δ > 0` and every `a < 0`.
    pub fn check_constraints(&self) -> Result<()> {
        if self.delta.data().iter().any(|d| !(*d > T::zero())) {
            return Err(Error::domain("scan", "delta must be positive"));
        }
        if self.a.data().iter().any(|a| !(*a < T::zero())) {
            return Err(Error::domain("scan", "a must be negative"));
        }
        Ok(())
    }
}

/// Zero-order-hold discretization of a scalar pair: `(ā, b̄)`.
pub fn discretize<T: Real>(a: T, delta: T, b: T) -> (T, T) {
    let (e, f) = kernel::zoh(a, delta);
    (e, f * b)
}

/// Element of the scan monoid: the affine map `h ↦ gain·h + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanElement<T> {
    pub gain: T,
    pub offset: T,
}

impl<T: Real> ScanElement<T> {
    pub fn identity() -> Self {
        Self { gain: T::one(), offset: T::zero() }
    }

    /// `self ∘ earlier`: apply `earlier` first, then `self`.
    pub fn after(self, earlier: Self) -> Self {
        Self { gain: self.gain * earlier.gain, offset: self.gain * earlier.offset + self.offset }
    }
}

/// Left-to-right recurrence.
pub fn scan_sequential<T: Real>(u: &Tensor<T>, p: &SsmParams<T>) -> Result<Tensor<T>> {
    let dims = p.dims(u)?;
    let a = p.a_full(dims.d_inner);
    let mut y = vec![T::zero(); u.numel()];
    kernel::forward(dims, u.data(), p.delta.data(), &a, p.b.data(), p.c.data(), p.d_skip.data(), &mut y, None);
    Tensor::new(u.shape().to_vec(), y)
}

/// Inclusive prefix composition of `elems` with a work-efficient
/// (up-sweep / down-sweep) scan. The result at `i` is
/// `elems[i] ∘ ... ∘ elems[0]`.
pub fn prefix_scan<T: Real>(elems: &[ScanElement<T>]) -> Vec<ScanElement<T>> {
    let n = elems.len();
    if n == 0 {
        return Vec::new();
    }
    let size = n.next_power_of_two();
    let mut tree = Vec::with_capacity(size);
    tree.extend_from_slice(elems);
    tree.resize(size, ScanElement::identity());
    // Up-sweep: tree[i] holds the composition of its subtree.
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            tree[i] = tree[i].after(tree[i - stride]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    // Down-sweep to an exclusive prefix.
    tree[size - 1] = ScanElement::identity();
    let mut stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = left.after(tree[i]);
            i += 2 * stride;
        }
        stride /= 2;
    }
    (0..n).map(|i| elems[i].after(tree[i])).collect()
}

/// Same contract as [`scan_sequential`], computed with [`prefix_scan`] over
/// every (batch, channel, state) lane.
pub fn scan_parallel<T: Real>(u: &Tensor<T>, p: &SsmParams<T>) -> Result<Tensor<T>> {
    let dims = p.dims(u)?;
    let kernel::Dims { batch, len, d_inner: di, d_state: ds } = dims;
    let a = p.a_full(di);
    let (ud, dd, bd, cd) = (u.data(), p.delta.data(), p.b.data(), p.c.data());
    let mut y = vec![T::zero(); u.numel()];
    let mut lane = Vec::with_capacity(len);
    for bi in 0..batch {
        for d in 0..di {
            for l in 0..len {
                let idx = (bi * len + l) * di + d;
                y[idx] = p.d_skip.data()[d] * ud[idx];
            }
            for n in 0..ds {
                lane.clear();
                for l in 0..len {
                    let idx = (bi * len + l) * di + d;
                    let (gain, f) = kernel::zoh(a[d * ds + n], dd[idx]);
                    lane.push(ScanElement { gain, offset: f * bd[(bi * len + l) * ds + n] * ud[idx] });
                }
                for (l, e) in prefix_scan(&lane).into_iter().enumerate() {
                    y[(bi * len + l) * di + d] += cd[(bi * len + l) * ds + n] * e.offset;
                }
            }
        }
    }
    Tensor::new(u.shape().to_vec(), y)
}

/// Convolution kernel `K[j] = ⟨c, ā^j ⊙ b̄⟩` of a time-invariant scan.
pub fn ssm_kernel<T: Real>(a_bar: &[T], b_bar: &[T], c: &[T], len: usize) -> Result<Vec<T>> {
    if a_bar.len() != b_bar.len() || a_bar.len() != c.len() {
        return Err(Error::dim(
            "ssm_kernel",
            format!("lengths {}, {}, {}", a_bar.len(), b_bar.len(), c.len()),
        ));
    }
    let mut power: Vec<T> = b_bar.to_vec();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c.iter().zip(&power).map(|(&c, &p)| c * p).sum());
        for (p, &a) in power.iter_mut().zip(a_bar) {
            *p *= a;
        }
    }
    Ok(k)
}

/// Kernel of one (batch, channel) lane of `p`. Fails with a contract error
/// unless `Δ`, `b` and `c` are constant along the sequence.
pub fn time_invariant_kernel<T: Real>(
    p: &SsmParams<T>,
    u: &Tensor<T>,
    batch: usize,
    channel: usize,
) -> Result<Vec<T>> {
    let dims = p.dims(u)?;
    let kernel::Dims { len, d_inner: di, d_state: ds, .. } = dims;
    if batch >= dims.batch || channel >= di {
        return Err(Error::dim("ssm_kernel", "lane out of range"));
    }
    let delta = |l: usize| p.delta.data()[(batch * len + l) * di + channel];
    fn row<T: Real>(t: &Tensor<T>, at: usize, ds: usize) -> &[T] {
        &t.data()[at * ds..(at + 1) * ds]
    }
    for l in 1..len {
        if delta(l) != delta(0) || row(&p.b, batch * len + l, ds) != row(&p.b, batch * len, ds)
            || row(&p.c, batch * len + l, ds) != row(&p.c, batch * len, ds) {
            return Err(Error::Contract("ssm_kernel needs time-invariant parameters".into()));
        }
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let a = p.a_full(di);
    let (mut a_bar, mut b_bar) = (Vec::with_capacity(ds), Vec::with_capacity(ds));
    for n in 0..ds {
        let (ab, bb) = discretize(a[channel * ds + n], delta(0), row(&p.b, batch * len, ds)[n]);
        a_bar.push(ab);
        b_bar.push(bb);
    }
    ssm_kernel(&a_bar, &b_bar, row(&p.c, batch * len, ds), len)
}

/// Causal convolution `y[l] = sum_{j <= l} k[j] u[l - j]`.
pub fn causal_conv<T: Real>(u: &[T], k: &[T]) -> Vec<T> {
    (0..u.len())
        .map(|l| (0..=l.min(k.len().saturating_sub(1))).map(|j| k[j] * u[l - j]).sum())
        .collect()
}
