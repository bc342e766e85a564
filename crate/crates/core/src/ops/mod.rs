//! Differentiable operators. Each op computes its output eagerly and pushes
//! one backward closure onto the graph's tape; closures read the output
//! gradient and accumulate additively into input gradients. Inputs are never
//! mutated, so every output is a fresh buffer.
//!
//! Borrow discipline inside backward closures: hold at most one mutable grad
//! borrow at a time (inputs may alias each other, e.g. `mul(x, x)`), and drop
//! it before taking the next.

mod conv;
mod linear;
mod loss;
mod lstm;
mod norm;

pub use lstm::{BiLstm, LstmDirection};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor};

/// How `pad1d` fills the new samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Wrap around the time axis, making downstream convolutions circular.
    Circular,
}

fn check_3d<S: Scalar>(x: &Tensor<S>, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c, t] => Ok((*b, *c, *t)),
        other => Err(Error::shape(format!(
            "{what} expects a (batch, channels, time) tensor, got {other:?}"
        ))),
    }
}

fn check_same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what} needs equal shapes, got {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    // ---- elementwise ----

    pub fn relu(&self, x: &Tensor<S>) -> Tensor<S> {
        let out: Vec<S> = x.data().iter().map(|&v| v.maxv(S::ZERO)).collect();
        let y = Tensor::raw(x.shape().to_vec(), out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let xd = xc.data();
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                if xd[i] > S::ZERO {
                    dx[i] += dy[i];
                }
            }
        });
        y
    }

    pub fn sigmoid(&self, x: &Tensor<S>) -> Tensor<S> {
        let out: Vec<S> = x
            .data()
            .iter()
            .map(|&v| S::ONE / (S::ONE + (-v).exp()))
            .collect();
        let y = Tensor::raw(x.shape().to_vec(), out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let yd = yc.data();
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                dx[i] += dy[i] * yd[i] * (S::ONE - yd[i]);
            }
        });
        y
    }

    pub fn tanh_act(&self, x: &Tensor<S>) -> Tensor<S> {
        let out: Vec<S> = x.data().iter().map(|&v| v.tanh()).collect();
        let y = Tensor::raw(x.shape().to_vec(), out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let yd = yc.data();
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                dx[i] += dy[i] * (S::ONE - yd[i] * yd[i]);
            }
        });
        y
    }

    /// Leaky rectifier with one learnable slope per channel (middle axis).
    pub fn prelu(&self, x: &Tensor<S>, slope: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c, t) = check_3d(x, "prelu")?;
        if slope.shape() != [c] {
            return Err(Error::shape(format!(
                "prelu slope shape {:?} does not match {c} channels",
                slope.shape()
            )));
        }
        let xd = x.data();
        let sd = slope.data();
        let mut out = vec![S::ZERO; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * t;
                let a = sd[ci];
                for ti in 0..t {
                    let v = xd[base + ti];
                    out[base + ti] = if v >= S::ZERO { v } else { a * v };
                }
            }
        }
        drop(xd);
        drop(sd);
        let y = Tensor::raw(x.shape().to_vec(), out);
        let (xc, sc, yc) = (x.clone(), slope.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let xd = xc.data();
            let sd = sc.data();
            {
                let mut dx = xc.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * t;
                        let a = sd[ci];
                        for ti in 0..t {
                            let g = if xd[base + ti] >= S::ZERO { S::ONE } else { a };
                            dx[base + ti] += dy[base + ti] * g;
                        }
                    }
                }
            }
            drop(sd);
            let mut ds = sc.grad_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let mut acc = S::ZERO;
                    for ti in 0..t {
                        let v = xd[base + ti];
                        if v < S::ZERO {
                            acc += dy[base + ti] * v;
                        }
                    }
                    ds[ci] += acc;
                }
            }
        });
        Ok(y)
    }

    /// Gated linear unit over the channel axis: the first half of the
    /// channels is multiplied by the sigmoid of the second half.
    pub fn glu(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c2, t) = check_3d(x, "glu")?;
        if c2 % 2 != 0 {
            return Err(Error::shape(format!(
                "glu needs an even channel count, got {c2}"
            )));
        }
        let c = c2 / 2;
        let xd = x.data();
        let mut out = vec![S::ZERO; b * c * t];
        let mut sig = vec![S::ZERO; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let a_base = (bi * c2 + ci) * t;
                let g_base = (bi * c2 + c + ci) * t;
                let o_base = (bi * c + ci) * t;
                for ti in 0..t {
                    let s = S::ONE / (S::ONE + (-xd[g_base + ti]).exp());
                    sig[o_base + ti] = s;
                    out[o_base + ti] = xd[a_base + ti] * s;
                }
            }
        }
        drop(xd);
        let y = Tensor::raw(vec![b, c, t], out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let xd = xc.data();
            let mut dx = xc.grad_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let a_base = (bi * c2 + ci) * t;
                    let g_base = (bi * c2 + c + ci) * t;
                    let o_base = (bi * c + ci) * t;
                    for ti in 0..t {
                        let s = sig[o_base + ti];
                        let g = dy[o_base + ti];
                        dx[a_base + ti] += g * s;
                        dx[g_base + ti] += g * xd[a_base + ti] * s * (S::ONE - s);
                    }
                }
            }
        });
        Ok(y)
    }

    // ---- arithmetic ----

    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        check_same_shape(a, b, "add")?;
        let out: Vec<S> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let y = Tensor::raw(a.shape().to_vec(), out);
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let mut da = ac.grad_mut();
                for i in 0..da.len() {
                    da[i] += dy[i];
                }
            }
            let mut db = bc.grad_mut();
            for i in 0..db.len() {
                db[i] += dy[i];
            }
        });
        Ok(y)
    }

    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        check_same_shape(a, b, "mul")?;
        let out: Vec<S> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let y = Tensor::raw(a.shape().to_vec(), out);
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let bd = bc.data();
                let mut da = ac.grad_mut();
                for i in 0..da.len() {
                    da[i] += dy[i] * bd[i];
                }
            }
            let ad = ac.data();
            let mut db = bc.grad_mut();
            for i in 0..db.len() {
                db[i] += dy[i] * ad[i];
            }
        });
        Ok(y)
    }

    pub fn scale(&self, x: &Tensor<S>, factor: f64) -> Tensor<S> {
        let f = S::from_f64(factor);
        let out: Vec<S> = x.data().iter().map(|&v| v * f).collect();
        let y = Tensor::raw(x.shape().to_vec(), out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                dx[i] += dy[i] * f;
            }
        });
        y
    }

    // ---- shape ----

    /// Pads the time axis of a (B, C, T) tensor on both sides.
    pub fn pad1d(
        &self,
        x: &Tensor<S>,
        left: usize,
        right: usize,
        mode: PadMode,
    ) -> Result<Tensor<S>> {
        let (b, c, t) = check_3d(x, "pad1d")?;
        if t == 0 {
            return Err(Error::shape("pad1d needs a nonempty time axis"));
        }
        let t_out = t + left + right;
        let xd = x.data();
        let mut out = vec![S::ZERO; b * c * t_out];
        for bc_i in 0..b * c {
            let src = &xd[bc_i * t..(bc_i + 1) * t];
            let dst = &mut out[bc_i * t_out..(bc_i + 1) * t_out];
            match mode {
                PadMode::Zero => dst[left..left + t].copy_from_slice(src),
                PadMode::Circular => {
                    for (j, d) in dst.iter_mut().enumerate() {
                        let idx = (j as i64 - left as i64).rem_euclid(t as i64) as usize;
                        *d = src[idx];
                    }
                }
            }
        }
        drop(xd);
        let y = Tensor::raw(vec![b, c, t_out], out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let mut dx = xc.grad_mut();
            for bc_i in 0..b * c {
                let dsrc = &dy[bc_i * t_out..(bc_i + 1) * t_out];
                let ddst = &mut dx[bc_i * t..(bc_i + 1) * t];
                match mode {
                    PadMode::Zero => {
                        for j in 0..t {
                            ddst[j] += dsrc[left + j];
                        }
                    }
                    PadMode::Circular => {
                        for (j, &g) in dsrc.iter().enumerate() {
                            let idx = (j as i64 - left as i64).rem_euclid(t as i64) as usize;
                            ddst[idx] += g;
                        }
                    }
                }
            }
        });
        Ok(y)
    }

    /// Copies `[start, start+len)` along `axis`; the adjoint scatters back.
    pub fn narrow(
        &self,
        x: &Tensor<S>,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Tensor<S>> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "narrow axis {axis} out of range for shape {shape:?}"
            )));
        }
        if start + len > shape[axis] || len == 0 {
            return Err(Error::shape(format!(
                "narrow [{start}, {}) invalid for axis extent {}",
                start + len,
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;

        let xd = x.data();
        let mut out = vec![S::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = &xd[(o * mid + start) * inner..(o * mid + start + len) * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        drop(xd);
        let y = Tensor::raw(out_shape, out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let mut dx = xc.grad_mut();
            for o in 0..outer {
                let dst = &mut dx[(o * mid + start) * inner..(o * mid + start + len) * inner];
                let src = &dy[o * len * inner..(o + 1) * len * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        });
        Ok(y)
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshape(&self, x: &Tensor<S>, new_shape: &[usize]) -> Result<Tensor<S>> {
        if new_shape.iter().product::<usize>() != x.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {new_shape:?}",
                x.shape()
            )));
        }
        let y = Tensor::raw(new_shape.to_vec(), x.to_vec());
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                dx[i] += dy[i];
            }
        });
        Ok(y)
    }

    /// Concatenates along the trailing axis; all leading axes must agree.
    pub fn concat_last(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != sb.len()
            || sa.is_empty()
            || sa[..sa.len() - 1] != sb[..sb.len() - 1]
        {
            return Err(Error::shape(format!(
                "concat_last shapes {sa:?} and {sb:?} incompatible"
            )));
        }
        let la = sa[sa.len() - 1];
        let lb = sb[sb.len() - 1];
        let rows = a.numel() / la;
        let mut out_shape = sa.to_vec();
        *out_shape.last_mut().unwrap() = la + lb;

        let ad = a.data();
        let bd = b.data();
        let mut out = vec![S::ZERO; rows * (la + lb)];
        for r in 0..rows {
            out[r * (la + lb)..r * (la + lb) + la].copy_from_slice(&ad[r * la..(r + 1) * la]);
            out[r * (la + lb) + la..(r + 1) * (la + lb)]
                .copy_from_slice(&bd[r * lb..(r + 1) * lb]);
        }
        drop(ad);
        drop(bd);
        let y = Tensor::raw(out_shape, out);
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let mut da = ac.grad_mut();
                for r in 0..rows {
                    for j in 0..la {
                        da[r * la + j] += dy[r * (la + lb) + j];
                    }
                }
            }
            let mut db = bc.grad_mut();
            for r in 0..rows {
                for j in 0..lb {
                    db[r * lb + j] += dy[r * (la + lb) + la + j];
                }
            }
        });
        Ok(y)
    }

    /// Swaps the two trailing axes of a rank-3 tensor.
    pub fn transpose_12(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, p, q) = check_3d(x, "transpose_12")?;
        let xd = x.data();
        let mut out = vec![S::ZERO; b * p * q];
        for bi in 0..b {
            for pi in 0..p {
                for qi in 0..q {
                    out[(bi * q + qi) * p + pi] = xd[(bi * p + pi) * q + qi];
                }
            }
        }
        drop(xd);
        let y = Tensor::raw(vec![b, q, p], out);
        let (xc, yc) = (x.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let mut dx = xc.grad_mut();
            for bi in 0..b {
                for pi in 0..p {
                    for qi in 0..q {
                        dx[(bi * p + pi) * q + qi] += dy[(bi * q + qi) * p + pi];
                    }
                }
            }
        });
        Ok(y)
    }

    /// Stacks T tensors of shape (B, C) into (B, T, C).
    pub fn time_stack(&self, steps: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = steps
            .first()
            .ok_or_else(|| Error::shape("time_stack needs at least one step"))?;
        let (b, c) = match first.shape() {
            [b, c] => (*b, *c),
            other => {
                return Err(Error::shape(format!(
                    "time_stack expects (batch, channels) steps, got {other:?}"
                )))
            }
        };
        let t = steps.len();
        for s in steps {
            if s.shape() != [b, c] {
                return Err(Error::shape("time_stack steps differ in shape"));
            }
        }
        let mut out = vec![S::ZERO; b * t * c];
        for (ti, s) in steps.iter().enumerate() {
            let sd = s.data();
            for bi in 0..b {
                out[(bi * t + ti) * c..(bi * t + ti) * c + c]
                    .copy_from_slice(&sd[bi * c..(bi + 1) * c]);
            }
        }
        let y = Tensor::raw(vec![b, t, c], out);
        let steps: Vec<Tensor<S>> = steps.to_vec();
        let yc = y.clone();
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            for (ti, s) in steps.iter().enumerate() {
                let mut ds = s.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        ds[bi * c + ci] += dy[(bi * t + ti) * c + ci];
                    }
                }
            }
        });
        Ok(y)
    }

    /// Scalar projection ⟨x, r⟩ against a constant vector; the verification
    /// harness uses it to reduce any output to one number.
    pub fn dot_const(&self, x: &Tensor<S>, r: &[S]) -> Result<Tensor<S>> {
        if r.len() != x.numel() {
            return Err(Error::shape(format!(
                "projection vector of {} values against tensor of {}",
                r.len(),
                x.numel()
            )));
        }
        let acc = x
            .data()
            .iter()
            .zip(r)
            .fold(S::ZERO, |a, (&v, &w)| a + v * w);
        let y = Tensor::raw(vec![1], vec![acc]);
        let (xc, yc) = (x.clone(), y.clone());
        let r: Vec<S> = r.to_vec();
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let g = dy[0];
            let mut dx = xc.grad_mut();
            for i in 0..dx.len() {
                dx[i] += r[i] * g;
            }
        });
        Ok(y)
    }
}
