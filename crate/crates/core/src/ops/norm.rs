//! Global layer normalization: statistics over all channels and time steps
//! jointly, per batch item, followed by a per-channel affine. Statistics and
//! the backward reductions accumulate in f64 regardless of the working
//! precision — this keeps the 32-bit path stable and makes the normalized
//! output nearly invariant to frame reorderings (circular shifts).

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor};

use super::check_3d;

impl<S: Scalar> Graph<S> {
    pub fn global_layer_norm(
        &self,
        x: &Tensor<S>,
        gain: &Tensor<S>,
        bias: &Tensor<S>,
        eps: f64,
    ) -> Result<Tensor<S>> {
        let (b, c, t) = check_3d(x, "global_layer_norm")?;
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::shape(format!(
                "global_layer_norm affine shapes {:?}/{:?} do not match {c} channels",
                gain.shape(),
                bias.shape()
            )));
        }
        let n = c * t;
        let xd = x.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut out = vec![S::ZERO; b * n];
        let mut means = vec![0.0f64; b];
        let mut istds = vec![0.0f64; b];
        for bi in 0..b {
            let xs = &xd[bi * n..(bi + 1) * n];
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for &v in xs {
                let v = v.to_f64();
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let istd = 1.0 / (var + eps).sqrt();
            means[bi] = mean;
            istds[bi] = istd;
            for ci in 0..c {
                let (gc, bc_) = (gd[ci].to_f64(), bd[ci].to_f64());
                for ti in 0..t {
                    let i = ci * t + ti;
                    let xhat = (xs[i].to_f64() - mean) * istd;
                    out[bi * n + i] = S::from_f64(gc * xhat + bc_);
                }
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let y = Tensor::raw(vec![b, c, t], out);

        let (xc, gc_t, bc_t, yc) = (x.clone(), gain.clone(), bias.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let xd = xc.data();
            let gd = gc_t.data();
            {
                let mut dx = xc.grad_mut();
                for bi in 0..b {
                    let xs = &xd[bi * n..(bi + 1) * n];
                    let dys = &dy[bi * n..(bi + 1) * n];
                    let (mean, istd) = (means[bi], istds[bi]);
                    // dxhat_i = dy_i * gain; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    let mut sum1 = 0.0f64;
                    let mut sum2 = 0.0f64;
                    for ci in 0..c {
                        let gcv = gd[ci].to_f64();
                        for ti in 0..t {
                            let i = ci * t + ti;
                            let dxhat = dys[i].to_f64() * gcv;
                            let xhat = (xs[i].to_f64() - mean) * istd;
                            sum1 += dxhat;
                            sum2 += dxhat * xhat;
                        }
                    }
                    let (m1, m2) = (sum1 / n as f64, sum2 / n as f64);
                    for ci in 0..c {
                        let gcv = gd[ci].to_f64();
                        for ti in 0..t {
                            let i = ci * t + ti;
                            let dxhat = dys[i].to_f64() * gcv;
                            let xhat = (xs[i].to_f64() - mean) * istd;
                            dx[bi * n + i] += S::from_f64(istd * (dxhat - m1 - xhat * m2));
                        }
                    }
                }
            }
            drop(gd);
            {
                let mut dg = gc_t.grad_mut();
                for ci in 0..c {
                    let mut acc = 0.0f64;
                    for bi in 0..b {
                        let (mean, istd) = (means[bi], istds[bi]);
                        for ti in 0..t {
                            let i = bi * n + ci * t + ti;
                            let xhat = (xd[i].to_f64() - mean) * istd;
                            acc += dy[i].to_f64() * xhat;
                        }
                    }
                    dg[ci] += S::from_f64(acc);
                }
            }
            let mut db = bc_t.grad_mut();
            for ci in 0..c {
                let mut acc = 0.0f64;
                for bi in 0..b {
                    for ti in 0..t {
                        acc += dy[bi * n + ci * t + ti].to_f64();
                    }
                }
                db[ci] += S::from_f64(acc);
            }
        });
        Ok(y)
    }
}
