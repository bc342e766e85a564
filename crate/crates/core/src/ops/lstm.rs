//! Bidirectional multi-layer LSTM assembled from tape primitives (linear,
//! sigmoid, tanh, mul, add, narrow), so its backward pass falls out of the
//! ops' adjoints instead of a hand-written BPTT. Gate layout in the fused
//! projection is [input, forget, cell, output], each `hidden` wide.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor};

pub struct LstmDirection<S: Scalar> {
    /// (4H, C_in) input projection
    pub w_ih: Tensor<S>,
    /// (4H, H) recurrent projection
    pub w_hh: Tensor<S>,
    /// (4H) single fused bias
    pub bias: Tensor<S>,
}

impl<S: Scalar> LstmDirection<S> {
    fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmDirection {
            w_ih: Tensor::uniform(&[4 * hidden, input], -bound, bound, rng),
            w_hh: Tensor::uniform(&[4 * hidden, hidden], -bound, bound, rng),
            bias: Tensor::uniform(&[4 * hidden], -bound, bound, rng),
        }
    }
}

/// Layer l consumes the previous layer's concatenated (B, T, 2H) output;
/// both directions start from zero states.
pub struct BiLstm<S: Scalar> {
    pub layers: Vec<[LstmDirection<S>; 2]>,
    pub hidden: usize,
}

impl<S: Scalar> BiLstm<S> {
    pub fn new(input: usize, hidden: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_size = if l == 0 { input } else { 2 * hidden };
                [
                    LstmDirection::new(in_size, hidden, rng),
                    LstmDirection::new(in_size, hidden, rng),
                ]
            })
            .collect();
        BiLstm { layers, hidden }
    }

    /// Named views of every weight, for the parameter registry.
    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (l, dirs) in self.layers.iter().enumerate() {
            for (d, name) in dirs.iter().zip(["fw", "bw"]) {
                out.push((format!("{prefix}.{l}.{name}.w_ih"), d.w_ih.clone()));
                out.push((format!("{prefix}.{l}.{name}.w_hh"), d.w_hh.clone()));
                out.push((format!("{prefix}.{l}.{name}.bias"), d.bias.clone()));
            }
        }
        out
    }

    /// x: (B, T, C) → (B, T, 2H)
    pub fn forward(&self, g: &Graph<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 3 {
            return Err(Error::shape(format!(
                "bilstm expects (batch, time, features), got {:?}",
                x.shape()
            )));
        }
        let mut cur = x.clone();
        for dirs in &self.layers {
            let fw = self.run_direction(g, &dirs[0], &cur, false)?;
            let bw = self.run_direction(g, &dirs[1], &cur, true)?;
            let fw_t = g.time_stack(&fw)?;
            let bw_t = g.time_stack(&bw)?;
            cur = g.concat_last(&fw_t, &bw_t)?;
        }
        Ok(cur)
    }

    /// Returns per-step hidden states (B, H) in forward time order.
    fn run_direction(
        &self,
        g: &Graph<S>,
        dir: &LstmDirection<S>,
        x: &Tensor<S>,
        reversed: bool,
    ) -> Result<Vec<Tensor<S>>> {
        let (b, t, _c) = match x.shape() {
            [b, t, c] => (*b, *t, *c),
            _ => unreachable!(),
        };
        let h_sz = self.hidden;
        // One big input projection for all time steps beats T small ones.
        let zin = g.linear(x, &dir.w_ih, Some(&dir.bias))?; // (B, T, 4H)
        let mut h = Tensor::zeros(&[b, h_sz]);
        let mut c = Tensor::zeros(&[b, h_sz]);
        let mut outs = vec![Tensor::zeros(&[b, h_sz]); t];
        let order: Vec<usize> = if reversed {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        };
        for ti in order {
            let z_t = g.reshape(&g.narrow(&zin, 1, ti, 1)?, &[b, 4 * h_sz])?;
            let z = g.add(&z_t, &g.linear(&h, &dir.w_hh, None)?)?;
            let gate_i = g.sigmoid(&g.narrow(&z, 1, 0, h_sz)?);
            let gate_f = g.sigmoid(&g.narrow(&z, 1, h_sz, h_sz)?);
            let gate_g = g.tanh_act(&g.narrow(&z, 1, 2 * h_sz, h_sz)?);
            let gate_o = g.sigmoid(&g.narrow(&z, 1, 3 * h_sz, h_sz)?);
            c = g.add(&g.mul(&gate_f, &c)?, &g.mul(&gate_i, &gate_g)?)?;
            h = g.mul(&gate_o, &g.tanh_act(&c))?;
            outs[ti] = h.clone();
        }
        Ok(outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lstm = BiLstm::<f64>::new(3, 2, 2, &mut rng);
        for dirs in &mut lstm.layers {
            for d in dirs {
                d.w_ih.data_mut().fill(0.0);
                d.w_hh.data_mut().fill(0.0);
                d.bias.data_mut().fill(0.0);
            }
        }
        let g = Graph::new();
        let x = Tensor::uniform(&[2, 5, 3], -1.0, 1.0, &mut rng);
        let y = lstm.forward(&g, &x).unwrap();
        assert_eq!(y.shape(), &[2, 5, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_width_is_twice_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = BiLstm::<f64>::new(6, 4, 2, &mut rng);
        let g = Graph::new();
        let x = Tensor::uniform(&[3, 7, 6], -1.0, 1.0, &mut rng);
        let y = lstm.forward(&g, &x).unwrap();
        assert_eq!(y.shape(), &[3, 7, 8]);
    }

    #[test]
    fn time_reversal_swaps_direction_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = BiLstm::<f64>::new(3, 2, 1, &mut rng);
        // Share weights across directions so the symmetry is exact.
        let fw_wih = lstm.layers[0][0].w_ih.to_vec();
        let fw_whh = lstm.layers[0][0].w_hh.to_vec();
        let fw_b = lstm.layers[0][0].bias.to_vec();
        lstm.layers[0][1].w_ih.data_mut().copy_from_slice(&fw_wih);
        lstm.layers[0][1].w_hh.data_mut().copy_from_slice(&fw_whh);
        lstm.layers[0][1].bias.data_mut().copy_from_slice(&fw_b);

        let (b, t, c, h) = (1, 5, 3, 2);
        let x = Tensor::uniform(&[b, t, c], -1.0, 1.0, &mut rng);
        let xv = x.to_vec();
        let mut rev = vec![0.0; xv.len()];
        for ti in 0..t {
            rev[(t - 1 - ti) * c..(t - ti) * c].copy_from_slice(&xv[ti * c..(ti + 1) * c]);
        }
        let xr = Tensor::from_vec(&[b, t, c], rev).unwrap();

        let g = Graph::new();
        let y = lstm.forward(&g, &x).unwrap().to_vec();
        let yr = lstm.forward(&g, &xr).unwrap().to_vec();
        let w = 2 * h;
        for ti in 0..t {
            let fwd = &y[ti * w..ti * w + h];
            let bwd = &y[ti * w + h..(ti + 1) * w];
            let r_fwd = &yr[(t - 1 - ti) * w..(t - 1 - ti) * w + h];
            let r_bwd = &yr[(t - 1 - ti) * w + h..(t - ti) * w];
            for i in 0..h {
                assert!((fwd[i] - r_bwd[i]).abs() < 1e-12);
                assert!((bwd[i] - r_fwd[i]).abs() < 1e-12);
            }
        }
    }
}
