//! Differentiable scan and convolution as fused tape operations.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernel::{self, Dims};
use super::{scan_parallel, ScanImpl, SsmParams};
use crate::tensor::CustomOp;
use crate::{Error, Real, Result, Tape, Tensor, Var};

struct SelectiveScan {
    dims: Dims,
}

impl<T: Real> CustomOp<T> for SelectiveScan {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let [u, delta, a, b, c, d] = inputs else {
            return Err(Error::Contract("selective_scan expects six inputs".into()));
        };
        let gr = kernel::backward(self.dims, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data(), g);
        Ok(vec![Some(gr.du), Some(gr.ddelta), Some(gr.da), Some(gr.db), Some(gr.dc), Some(gr.dd)])
    }
}

/// Selective scan on the tape.
///
/// Shapes: `u`, `delta` `[batch, len, d_inner]`; `a` `[d_inner, d_state]`;
/// `b`, `c` `[batch, len, d_state]`; `d_skip` `[d_inner]`. `delta` must be
/// positive and `a` negative; both are the caller's responsibility (they
/// come out of softplus and `-softplus`).
#[allow(clippy::too_many_arguments)]
pub fn selective_scan<T: Real>(
    tape: &mut Tape<T>,
    u: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
    d_skip: Var,
    imp: ScanImpl,
) -> Result<Var> {
    let &[batch, len, d_inner] = tape.shape(u) else {
        return Err(Error::dim("selective_scan", format!("input must be rank 3, got {:?}", tape.shape(u))));
    };
    let &[_, d_state] = tape.shape(a) else {
        return Err(Error::dim("selective_scan", format!("a must be [d_inner, d_state], got {:?}", tape.shape(a))));
    };
    let params = SsmParams {
        a: tape.value(a).clone(),
        delta: tape.value(delta).clone(),
        b: tape.value(b).clone(),
        c: tape.value(c).clone(),
        d_skip: tape.value(d_skip).clone(),
    };
    // Shape validation lives in SsmParams; run it even on the fast path.
    let dims = params.dims(tape.value(u))?;
    debug_assert_eq!(dims, Dims { batch, len, d_inner, d_state });
    let out = match imp {
        ScanImpl::Sequential => {
            let mut y = vec![T::zero(); batch * len * d_inner];
            kernel::forward(
                dims,
                tape.value(u).data(),
                params.delta.data(),
                params.a.data(),
                params.b.data(),
                params.c.data(),
                params.d_skip.data(),
                &mut y,
                None,
            );
            Tensor::new([batch, len, d_inner], y)?
        }
        ScanImpl::Parallel => scan_parallel(tape.value(u), &params)?,
    };
    Ok(tape.custom(&[u, delta, a, b, c, d_skip], out, Box::new(SelectiveScan { dims })))
}

struct DepthwiseConv {
    dims: (usize, usize, usize),
    width: usize,
}

impl<T: Real> CustomOp<T> for DepthwiseConv {
    fn name(&self) -> &'static str {
        "causal_depthwise_conv"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let (dx, dw, db) = kernel::conv_backward(self.dims, inputs[0].data(), inputs[1].data(), self.width, g);
        let mut out = vec![Some(dx), Some(dw)];
        if inputs.len() == 3 {
            out.push(Some(db));
        }
        Ok(out)
    }
}

/// Per-channel causal convolution along the sequence axis of
/// `x[batch, len, ch]` with `w[ch, width]` and optional `bias[ch]`.
pub fn causal_depthwise_conv<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let &[batch, len, ch] = tape.shape(x) else {
        return Err(Error::dim("causal_depthwise_conv", format!("input must be rank 3, got {:?}", tape.shape(x))));
    };
    let &[wc, width] = tape.shape(w) else {
        return Err(Error::dim("causal_depthwise_conv", format!("weight must be rank 2, got {:?}", tape.shape(w))));
    };
    if wc != ch || width == 0 {
        return Err(Error::dim("causal_depthwise_conv", format!("weight {:?} for {ch} channels", tape.shape(w))));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [ch] {
            return Err(Error::dim("causal_depthwise_conv", format!("bias {:?}", tape.shape(b))));
        }
    }
    let dims = (batch, len, ch);
    let out = kernel::conv_forward(
        dims,
        tape.value(x).data(),
        tape.value(w).data(),
        width,
        bias.map(|b| tape.value(b).data()),
    );
    let value = Tensor::new([batch, len, ch], out)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.custom(&inputs, value, Box::new(DepthwiseConv { dims, width })))
}
