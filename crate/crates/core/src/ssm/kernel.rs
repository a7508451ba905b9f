//! Raw selective-scan loops shared by the pure functions and the tape op.
//!
//! Layout: `u`, `delta`, `y` are `[batch, len, d_inner]`; `b`, `c` are
//! `[batch, len, d_state]`; `a` is `[d_inner, d_state]`; `d_skip` is
//! `[d_inner]`. Internally the state is held as `[d_state, d_inner]` so the
//! innermost loops run over contiguous channels and vectorize.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub batch: usize,
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
}

/// `|Δa|` below this uses the Euler step `b̄ = Δ·b`.
pub(crate) const EULER_THRESHOLD: f64 = 1e-6;

/// Zero-order-hold factors `(ā, f)` with `b̄ = f·b`.
#[inline(always)]
pub(crate) fn zoh<T: Real>(a: T, delta: T) -> (T, T) {
    let x = delta * a;
    let (e, em1) = x.exp_pair();
    let f = if x.abs() < T::lit(EULER_THRESHOLD) { delta } else { em1 / a };
    (e, f)
}

/// Partial derivatives `(∂f/∂Δ, ∂f/∂a)` of the factor returned by [`zoh`].
#[inline(always)]
fn zoh_partials<T: Real>(a: T, delta: T, e: T) -> (T, T) {
    let x = delta * a;
    let ax = x.abs();
    // (x e^x - e^x + 1) / x^2 by its series near zero.
    let phi = T::lit(0.5) + x * (T::lit(1.0 / 3.0) + x * (T::lit(0.125) + x * T::lit(1.0 / 30.0)));
    let near = delta * delta * phi;
    let far = (x * e - (e - T::one())) / (a * a);
    let dfa = if ax < T::lit(EULER_THRESHOLD) {
        T::zero()
    } else if ax < T::lit(1e-3) {
        near
    } else {
        far
    };
    let dfd = if ax < T::lit(EULER_THRESHOLD) { T::one() } else { e };
    (dfd, dfa)
}

/// `[rows, cols]` to `[cols, rows]`.
fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Forward scan. When `states` is given it receives every `h_l` in the
/// internal layout (`[batch, len, d_state, d_inner]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Real>(
    dims: Dims,
    u: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d_skip: &[T],
    y: &mut [T],
    mut states: Option<&mut [T]>,
) {
    let Dims { batch, len, d_inner: di, d_state: ds } = dims;
    let at = transpose(a, di, ds);
    let mut h = vec![T::zero(); ds * di];
    let mut acc = vec![T::zero(); di];
    for bi in 0..batch {
        h.iter_mut().for_each(|v| *v = T::zero());
        for l in 0..len {
            let row = (bi * len + l) * di;
            let bc = (bi * len + l) * ds;
            let (ur, dr) = (&u[row..row + di], &delta[row..row + di]);
            acc.iter_mut().for_each(|v| *v = T::zero());
            for n in 0..ds {
                let (bn, cn) = (b[bc + n], c[bc + n]);
                let hn = &mut h[n * di..(n + 1) * di];
                let an = &at[n * di..(n + 1) * di];
                for d in 0..di {
                    let (e, f) = zoh(an[d], dr[d]);
                    hn[d] = e * hn[d] + f * bn * ur[d];
                    acc[d] += cn * hn[d];
                }
            }
            for d in 0..di {
                y[row + d] = acc[d] + d_skip[d] * ur[d];
            }
            if let Some(st) = states.as_deref_mut() {
                let off = (bi * len + l) * di * ds;
                st[off..off + di * ds].copy_from_slice(&h);
            }
        }
    }
}

pub(crate) struct ScanGrads<T> {
    pub du: Vec<T>,
    pub ddelta: Vec<T>,
    pub da: Vec<T>,
    pub db: Vec<T>,
    pub dc: Vec<T>,
    pub dd: Vec<T>,
}

/// Reverse pass. States are recomputed one batch item at a time, so memory
/// stays at `len * d_inner * d_state` regardless of batch size.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    dims: Dims,
    u: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d_skip: &[T],
    gy: &[T],
) -> ScanGrads<T> {
    let Dims { batch, len, d_inner: di, d_state: ds } = dims;
    let mut g = ScanGrads {
        du: vec![T::zero(); u.len()],
        ddelta: vec![T::zero(); delta.len()],
        da: vec![T::zero(); a.len()],
        db: vec![T::zero(); b.len()],
        dc: vec![T::zero(); c.len()],
        dd: vec![T::zero(); d_skip.len()],
    };
    let at = transpose(a, di, ds);
    let mut da_t = vec![T::zero(); ds * di];
    let item = Dims { batch: 1, ..dims };
    let mut states = vec![T::zero(); len * di * ds];
    let mut y_scratch = vec![T::zero(); len * di];
    let mut carry = vec![T::zero(); ds * di];
    let zeros = vec![T::zero(); di];
    let (mut du, mut ddelta) = (vec![T::zero(); di], vec![T::zero(); di]);
    // Per-channel terms of the `c` and `b` gradients; summed after the
    // channel loop so that loop carries no reduction and vectorizes.
    let (mut dc_terms, mut db_terms) = (vec![T::zero(); di], vec![T::zero(); di]);
    for bi in 0..batch {
        let r_in = bi * len * di..(bi + 1) * len * di;
        let r_bc = bi * len * ds..(bi + 1) * len * ds;
        forward(
            item,
            &u[r_in.clone()],
            &delta[r_in.clone()],
            a,
            &b[r_bc.clone()],
            &c[r_bc.clone()],
            d_skip,
            &mut y_scratch,
            Some(&mut states),
        );
        carry.iter_mut().for_each(|v| *v = T::zero());
        for l in (0..len).rev() {
            let row = (bi * len + l) * di;
            let bc = (bi * len + l) * ds;
            let (gr, ur, dr) = (&gy[row..row + di], &u[row..row + di], &delta[row..row + di]);
            for d in 0..di {
                du[d] = gr[d] * d_skip[d];
                ddelta[d] = T::zero();
                g.dd[d] += gr[d] * ur[d];
            }
            for n in 0..ds {
                let (bn, cn) = (b[bc + n], c[bc + n]);
                let k = n * di..(n + 1) * di;
                let h_now = &states[l * di * ds..(l + 1) * di * ds][k.clone()];
                let h_prev = if l > 0 { &states[(l - 1) * di * ds..l * di * ds][k.clone()] } else { &zeros[..] };
                let an = &at[k.clone()];
                let carry_n = &mut carry[k.clone()];
                let da_n = &mut da_t[k];
                for d in 0..di {
                    let (e, f) = zoh(an[d], dr[d]);
                    let dh = gr[d] * cn + carry_n[d];
                    dc_terms[d] = gr[d] * h_now[d];
                    du[d] += dh * f * bn;
                    let dabar = dh * h_prev[d];
                    let dbbar = dh * ur[d];
                    let (dfd, dfa) = zoh_partials(an[d], dr[d], e);
                    ddelta[d] += dabar * e * an[d] + dbbar * bn * dfd;
                    da_n[d] += dabar * e * dr[d] + dbbar * bn * dfa;
                    db_terms[d] = dbbar * f;
                    carry_n[d] = e * dh;
                }
                g.dc[bc + n] += dc_terms.iter().fold(T::zero(), |s, &v| s + v);
                g.db[bc + n] += db_terms.iter().fold(T::zero(), |s, &v| s + v);
            }
            for d in 0..di {
                g.du[row + d] += du[d];
                g.ddelta[row + d] += ddelta[d];
            }
        }
    }
    g.da = transpose(&da_t, ds, di);
    g
}

/// Depthwise causal convolution along `len` for `x[batch, len, ch]`,
/// `w[ch, width]`: `out[l] = bias + sum_j w[j] x[l - (width - 1) + j]`.
pub(crate) fn conv_forward<T: Real>(
    (batch, len, ch): (usize, usize, usize),
    x: &[T],
    w: &[T],
    width: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..batch {
        for l in 0..len {
            let o = &mut out[(bi * len + l) * ch..(bi * len + l + 1) * ch];
            if let Some(bias) = bias {
                o.copy_from_slice(bias);
            }
            for j in 0..width {
                let Some(src) = (l + j + 1).checked_sub(width) else { continue };
                let xr = &x[(bi * len + src) * ch..(bi * len + src + 1) * ch];
                for cc in 0..ch {
                    o[cc] += w[cc * width + j] * xr[cc];
                }
            }
        }
    }
    out
}

/// Gradients `(dx, dw, dbias)` of [`conv_forward`].
pub(crate) fn conv_backward<T: Real>(
    (batch, len, ch): (usize, usize, usize),
    x: &[T],
    w: &[T],
    width: usize,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut dbias = vec![T::zero(); ch];
    for bi in 0..batch {
        for l in 0..len {
            let gr = &g[(bi * len + l) * ch..(bi * len + l + 1) * ch];
            for cc in 0..ch {
                dbias[cc] += gr[cc];
            }
            for j in 0..width {
                let Some(src) = (l + j + 1).checked_sub(width) else { continue };
                let base = (bi * len + src) * ch;
                for cc in 0..ch {
                    dw[cc * width + j] += gr[cc] * x[base + cc];
                    dx[base + cc] += gr[cc] * w[cc * width + j];
                }
            }
        }
    }
    (dx, dw, dbias)
}
