//! Affine map on the trailing axis: all leading axes are treated as rows.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor};

impl<S: Scalar> Graph<S> {
    /// out[..., co] = bias[co] + Σ_ci x[..., ci] · w[co, ci]
    pub fn linear(
        &self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>> {
        let xs = x.shape();
        if xs.is_empty() {
            return Err(Error::shape("linear input needs at least one axis"));
        }
        let ci = xs[xs.len() - 1];
        let (co, wci) = match weight.shape() {
            [co, wci] => (*co, *wci),
            other => {
                return Err(Error::shape(format!(
                    "linear weight must be (out, in), got {other:?}"
                )))
            }
        };
        if wci != ci {
            return Err(Error::shape(format!(
                "linear weight expects {wci} inputs, trailing axis is {ci}"
            )));
        }
        if let Some(bt) = bias {
            if bt.shape() != [co] {
                return Err(Error::shape(format!(
                    "linear bias shape {:?}, want [{co}]",
                    bt.shape()
                )));
            }
        }
        let rows = x.numel() / ci;
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = co;

        let xd = x.data();
        let wd = weight.data();
        let mut out = vec![S::ZERO; rows * co];
        for r in 0..rows {
            let xrow = &xd[r * ci..(r + 1) * ci];
            let orow = &mut out[r * co..(r + 1) * co];
            for c in 0..co {
                let wrow = &wd[c * ci..(c + 1) * ci];
                let mut acc = S::ZERO;
                for i in 0..ci {
                    acc += xrow[i] * wrow[i];
                }
                orow[c] = acc;
            }
        }
        if let Some(bt) = bias {
            let bd = bt.data();
            for r in 0..rows {
                for c in 0..co {
                    out[r * co + c] += bd[c];
                }
            }
        }
        drop(xd);
        drop(wd);
        let y = Tensor::raw(out_shape, out);

        let (xc, wc, yc) = (x.clone(), weight.clone(), y.clone());
        let bc = bias.cloned();
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            {
                let wd = wc.data();
                let mut dx = xc.grad_mut();
                for r in 0..rows {
                    let drow = &dy[r * co..(r + 1) * co];
                    let dxrow = &mut dx[r * ci..(r + 1) * ci];
                    for c in 0..co {
                        let g = drow[c];
                        let wrow = &wd[c * ci..(c + 1) * ci];
                        for i in 0..ci {
                            dxrow[i] += g * wrow[i];
                        }
                    }
                }
            }
            {
                let xd = xc.data();
                let mut dw = wc.grad_mut();
                for r in 0..rows {
                    let drow = &dy[r * co..(r + 1) * co];
                    let xrow = &xd[r * ci..(r + 1) * ci];
                    for c in 0..co {
                        let g = drow[c];
                        let dwrow = &mut dw[c * ci..(c + 1) * ci];
                        for i in 0..ci {
                            dwrow[i] += g * xrow[i];
                        }
                    }
                }
            }
            if let Some(bt) = bc {
                let mut db = bt.grad_mut();
                for r in 0..rows {
                    for c in 0..co {
                        db[c] += dy[r * co + c];
                    }
                }
            }
        });
        Ok(y)
    }
}
