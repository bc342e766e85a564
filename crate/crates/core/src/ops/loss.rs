//! Reduction losses. Both reduce to the mean over every coordinate (batch,
//! source, channel, time) so their magnitudes are comparable across batch
//! sizes and extract lengths; accumulation is in f64 for stability.

use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor};

use super::check_same_shape;

impl<S: Scalar> Graph<S> {
    /// mean |a - b| over all coordinates.
    pub fn mean_abs_diff(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        check_same_shape(a, b, "mean_abs_diff")?;
        let n = a.numel();
        let acc: f64 = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| (x - y).abs().to_f64())
            .sum();
        let y = Tensor::raw(vec![1], vec![S::from_f64(acc / n as f64)]);
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let g = dy[0] / S::from_f64(n as f64);
            let ad = ac.data();
            let bd = bc.data();
            // sign(0) = 0: a kink contributes nothing.
            let signs: Vec<S> = ad
                .iter()
                .zip(bd.iter())
                .map(|(&x, &y)| {
                    if x > y {
                        S::ONE
                    } else if x < y {
                        -S::ONE
                    } else {
                        S::ZERO
                    }
                })
                .collect();
            drop(ad);
            drop(bd);
            {
                let mut da = ac.grad_mut();
                for i in 0..da.len() {
                    da[i] += g * signs[i];
                }
            }
            let mut db = bc.grad_mut();
            for i in 0..db.len() {
                db[i] -= g * signs[i];
            }
        });
        Ok(y)
    }

    /// mean (a - b)^2 over all coordinates.
    pub fn mean_sq_diff(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        check_same_shape(a, b, "mean_sq_diff")?;
        let n = a.numel();
        let acc: f64 = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| {
                let d = (x - y).to_f64();
                d * d
            })
            .sum();
        let y = Tensor::raw(vec![1], vec![S::from_f64(acc / n as f64)]);
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        self.push(move || {
            let Some(dy) = yc.grad_opt() else { return };
            let g = dy[0] * S::from_f64(2.0 / n as f64);
            let ad = ac.to_vec();
            let bd = bc.to_vec();
            {
                let mut da = ac.grad_mut();
                for i in 0..da.len() {
                    da[i] += g * (ad[i] - bd[i]);
                }
            }
            let mut db = bc.grad_mut();
            for i in 0..db.len() {
                db[i] -= g * (ad[i] - bd[i]);
            }
        });
        Ok(y)
    }
}
