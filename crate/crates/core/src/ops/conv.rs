//! 1-D convolution family. No implicit padding anywhere — padding is an
//! explicit op at model level, which keeps the kernels and their adjoints
//! small enough to verify exhaustively.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor};

use super::check_3d;

fn conv_out_len(t: usize, k: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = (k - 1) * dilation + 1;
    if t < span {
        return None;
    }
    Some((t - span) / stride + 1)
}

fn check_conv_args(stride: usize, dilation: usize) -> Result<()> {
    if stride == 0 || dilation == 0 {
        return Err(Error::arg("stride and dilation must be positive"));
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    /// Cross-correlation: out[b,co,t] = bias[co] + Σ_{ci,k} x[b,ci,t·stride + k·dilation] · w[co,ci,k].
    pub fn conv1d(
        &self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        dilation: usize,
    ) -> Result<Tensor<S>> {
        check_conv_args(stride, dilation)?;
        let (b, ci, t) = check_3d(x, "conv1d input")?;
        let (co, wci, k) = check_3d(weight, "conv1d weight")?;
        if wci != ci {
            return Err(Error::shape(format!(
                "conv1d weight expects {wci} input channels, input has {ci}"
            )));
        }
        if let Some(bt) = bias {
            if bt.shape() != [co] {
                return Err(Error::shape(format!(
                    "conv1d bias shape {:?}, want [{co}]",
                    bt.shape()
                )));
            }
        }
        let t_out = conv_out_len(t, k, stride, dilation).ok_or_else(|| {
            Error::shape(format!(
                "conv1d input length {t} shorter than kernel span {}",
                (k - 1) * dilation + 1
            ))
        })?;

        let xd = x.data();
        let wd = weight.data();
        let mut out = vec![S::ZERO; b * co * t_out];
        if let Some(bt) = bias {
            let bd = bt.data();
            for bi in 0..b {
                for c in 0..co {
                    out[(bi * co + c) * t_out..(bi * co + c + 1) * t_out].fill(bd[c]);
                }
            }
        }
        for bi in 0..b {
            for c in 0..co {
                let orow = &mut out[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                for cin in 0..ci {
                    let xrow = &xd[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                    for kk in 0..k {
                        let wv = wd[(c * ci + cin) * k + kk];
                        let base = kk * dilation;
                        if stride == 1 {
                            for (ti, o) in orow.iter_mut().enumerate() {
                                *o += wv * xrow[base + ti];
                            }
                        } else {
                            for (ti, o) in orow.iter_mut().enumerate() {
                                *o += wv * xrow[base + ti * stride];
                            }
                        }
                    }
                }
            }
        }
        drop(xd);
        drop(wd);
        let y = Tensor::raw(vec![b, co, t_out], out);

        let (xc, wc, yc) = (x.clone(), weight.clone(), y.clone());
        let bc = bias.cloned();
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let wd = wc.data();
                let mut dx = xc.grad_mut();
                for bi in 0..b {
                    for c in 0..co {
                        let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                        for cin in 0..ci {
                            let dxrow =
                                &mut dx[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                            for kk in 0..k {
                                let wv = wd[(c * ci + cin) * k + kk];
                                let base = kk * dilation;
                                for (ti, &g) in drow.iter().enumerate() {
                                    dxrow[base + ti * stride] += wv * g;
                                }
                            }
                        }
                    }
                }
            }
            {
                let xd = xc.data();
                let mut dw = wc.grad_mut();
                for bi in 0..b {
                    for c in 0..co {
                        let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                        for cin in 0..ci {
                            let xrow = &xd[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                            for kk in 0..k {
                                let base = kk * dilation;
                                let mut acc = S::ZERO;
                                for (ti, &g) in drow.iter().enumerate() {
                                    acc += xrow[base + ti * stride] * g;
                                }
                                dw[(c * ci + cin) * k + kk] += acc;
                            }
                        }
                    }
                }
            }
            if let Some(bt) = bc {
                let mut db = bt.grad_mut();
                for bi in 0..b {
                    for c in 0..co {
                        let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                        let mut acc = S::ZERO;
                        for &g in drow {
                            acc += g;
                        }
                        db[c] += acc;
                    }
                }
            }
        });
        Ok(y)
    }

    /// Fractionally-strided counterpart: out length (T−1)·stride + K; the
    /// forward map is exactly the adjoint (backward-data) of `conv1d` with
    /// the same weight, reindexed to the (C_in, C_out, K) layout.
    pub fn conv_transpose1d(
        &self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
    ) -> Result<Tensor<S>> {
        check_conv_args(stride, 1)?;
        let (b, ci, t) = check_3d(x, "conv_transpose1d input")?;
        let (wci, co, k) = check_3d(weight, "conv_transpose1d weight")?;
        if wci != ci {
            return Err(Error::shape(format!(
                "conv_transpose1d weight expects {wci} input channels, input has {ci}"
            )));
        }
        if t == 0 {
            return Err(Error::shape("conv_transpose1d needs a nonempty time axis"));
        }
        if let Some(bt) = bias {
            if bt.shape() != [co] {
                return Err(Error::shape(format!(
                    "conv_transpose1d bias shape {:?}, want [{co}]",
                    bt.shape()
                )));
            }
        }
        let t_out = (t - 1) * stride + k;

        let xd = x.data();
        let wd = weight.data();
        let mut out = vec![S::ZERO; b * co * t_out];
        if let Some(bt) = bias {
            let bd = bt.data();
            for bi in 0..b {
                for c in 0..co {
                    out[(bi * co + c) * t_out..(bi * co + c + 1) * t_out].fill(bd[c]);
                }
            }
        }
        for bi in 0..b {
            for cin in 0..ci {
                let xrow = &xd[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                for c in 0..co {
                    let orow = &mut out[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                    for kk in 0..k {
                        let wv = wd[(cin * co + c) * k + kk];
                        for (ti, &xv) in xrow.iter().enumerate() {
                            orow[ti * stride + kk] += wv * xv;
                        }
                    }
                }
            }
        }
        drop(xd);
        drop(wd);
        let y = Tensor::raw(vec![b, co, t_out], out);

        let (xc, wc, yc) = (x.clone(), weight.clone(), y.clone());
        let bc = bias.cloned();
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let wd = wc.data();
                let mut dx = xc.grad_mut();
                for bi in 0..b {
                    for cin in 0..ci {
                        let dxrow = &mut dx[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                        for c in 0..co {
                            let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                            for kk in 0..k {
                                let wv = wd[(cin * co + c) * k + kk];
                                for (ti, d) in dxrow.iter_mut().enumerate() {
                                    *d += wv * drow[ti * stride + kk];
                                }
                            }
                        }
                    }
                }
            }
            {
                let xd = xc.data();
                let mut dw = wc.grad_mut();
                for bi in 0..b {
                    for cin in 0..ci {
                        let xrow = &xd[(bi * ci + cin) * t..(bi * ci + cin + 1) * t];
                        for c in 0..co {
                            let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                            for kk in 0..k {
                                let mut acc = S::ZERO;
                                for (ti, &xv) in xrow.iter().enumerate() {
                                    acc += xv * drow[ti * stride + kk];
                                }
                                dw[(cin * co + c) * k + kk] += acc;
                            }
                        }
                    }
                }
            }
            if let Some(bt) = bc {
                let mut db = bt.grad_mut();
                for bi in 0..b {
                    for c in 0..co {
                        let drow = &dy[(bi * co + c) * t_out..(bi * co + c + 1) * t_out];
                        let mut acc = S::ZERO;
                        for &g in drow {
                            acc += g;
                        }
                        db[c] += acc;
                    }
                }
            }
        });
        Ok(y)
    }

    /// Per-channel convolution: channel c of the output sees only channel c
    /// of the input. Weight shape (C, 1, K), no bias.
    pub fn depthwise_conv1d(
        &self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        stride: usize,
        dilation: usize,
    ) -> Result<Tensor<S>> {
        check_conv_args(stride, dilation)?;
        let (b, c, t) = check_3d(x, "depthwise_conv1d input")?;
        let (wc_, one, k) = check_3d(weight, "depthwise_conv1d weight")?;
        if wc_ != c || one != 1 {
            return Err(Error::shape(format!(
                "depthwise_conv1d weight {:?} does not match {c} channels",
                weight.shape()
            )));
        }
        let t_out = conv_out_len(t, k, stride, dilation).ok_or_else(|| {
            Error::shape(format!(
                "depthwise_conv1d input length {t} shorter than kernel span {}",
                (k - 1) * dilation + 1
            ))
        })?;

        let xd = x.data();
        let wd = weight.data();
        let mut out = vec![S::ZERO; b * c * t_out];
        for bi in 0..b {
            for ch in 0..c {
                let xrow = &xd[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                let orow = &mut out[(bi * c + ch) * t_out..(bi * c + ch + 1) * t_out];
                for kk in 0..k {
                    let wv = wd[ch * k + kk];
                    let base = kk * dilation;
                    for (ti, o) in orow.iter_mut().enumerate() {
                        *o += wv * xrow[base + ti * stride];
                    }
                }
            }
        }
        drop(xd);
        drop(wd);
        let y = Tensor::raw(vec![b, c, t_out], out);

        let (xc, wc, yc) = (x.clone(), weight.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let wd = wc.data();
                let mut dx = xc.grad_mut();
                for bi in 0..b {
                    for ch in 0..c {
                        let drow = &dy[(bi * c + ch) * t_out..(bi * c + ch + 1) * t_out];
                        let dxrow = &mut dx[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                        for kk in 0..k {
                            let wv = wd[ch * k + kk];
                            let base = kk * dilation;
                            for (ti, &g) in drow.iter().enumerate() {
                                dxrow[base + ti * stride] += wv * g;
                            }
                        }
                    }
                }
            }
            let xd = xc.data();
            let mut dw = wc.grad_mut();
            for bi in 0..b {
                for ch in 0..c {
                    let drow = &dy[(bi * c + ch) * t_out..(bi * c + ch + 1) * t_out];
                    let xrow = &xd[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                    for kk in 0..k {
                        let base = kk * dilation;
                        let mut acc = S::ZERO;
                        for (ti, &g) in drow.iter().enumerate() {
                            acc += xrow[base + ti * stride] * g;
                        }
                        dw[ch * k + kk] += acc;
                    }
                }
            }
        });
        Ok(y)
    }

    /// 1×1 convolution — a per-time-step linear map across channels. Shares
    /// the conv1d kernel, which is already contiguous for K=1, stride 1.
    pub fn pointwise_conv1d(
        &self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>> {
        let (_, _, k) = check_3d(weight, "pointwise_conv1d weight")?;
        if k != 1 {
            return Err(Error::shape(format!(
                "pointwise_conv1d weight kernel must be 1, got {k}"
            )));
        }
        self.conv1d(x, weight, bias, 1, 1)
    }
}
