//! Adjoint-identity verification for the linear operators: for a linear map
//! A built from fixed weights, ⟨A x, y⟩ must equal ⟨x, Aᵀ y⟩, where Aᵀ y is
//! obtained from one backward pass. Also checks that the transposed
//! convolution's forward pass IS conv1d's backward-data map.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Tensor};

pub struct AdjointCase {
    pub name: String,
    pub rel_err: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

/// ⟨A x, y⟩ vs ⟨x, Aᵀ y⟩ for the map x ↦ forward(x) (linear in x).
fn check_linear_map<F>(x: &Tensor<f64>, forward: F, rng: &mut impl Rng) -> Result<f64>
where
    F: Fn(&Graph<f64>) -> Result<Tensor<f64>>,
{
    x.zero_grad();
    let g = Graph::new();
    let ax = forward(&g)?;
    let y: Vec<f64> = (0..ax.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lhs = dot(&ax.to_vec(), &y);
    let proj = g.dot_const(&ax, &y)?;
    g.backward(&proj)?; // x.grad = Aᵀ y
    let rhs = dot(&x.to_vec(), &x.grad_vec());
    Ok(rel_err(lhs, rhs))
}

/// Runs `instances` random adjoint checks spread over the linear ops.
pub fn run_adjoint_suite(instances: usize, seed: u64) -> Result<Vec<AdjointCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(instances);
    for i in 0..instances {
        let kind = i % 5;
        let b = rng.gen_range(1..=3usize);
        let ci = rng.gen_range(1..=4usize);
        let co = rng.gen_range(1..=4usize);
        let k = rng.gen_range(1..=5usize);
        let stride = rng.gen_range(1..=3usize);
        let dilation = rng.gen_range(1..=3usize);
        let span = (k - 1) * dilation + 1;
        let t = span + rng.gen_range(0..12usize);
        let case = match kind {
            0 => {
                let x = Tensor::uniform(&[b, ci, t], -1.0, 1.0, &mut rng);
                let w = Tensor::uniform(&[co, ci, k], -1.0, 1.0, &mut rng);
                let err = check_linear_map(&x, |g| g.conv1d(&x, &w, None, stride, dilation), &mut rng)?;
                AdjointCase {
                    name: format!("conv1d b{b} ci{ci} co{co} k{k} s{stride} d{dilation} t{t}"),
                    rel_err: err,
                }
            }
            1 => {
                let x = Tensor::uniform(&[b, ci, t], -1.0, 1.0, &mut rng);
                let w = Tensor::uniform(&[ci, co, k], -1.0, 1.0, &mut rng);
                let err =
                    check_linear_map(&x, |g| g.conv_transpose1d(&x, &w, None, stride), &mut rng)?;
                AdjointCase {
                    name: format!("conv_transpose1d b{b} ci{ci} co{co} k{k} s{stride} t{t}"),
                    rel_err: err,
                }
            }
            2 => {
                let x = Tensor::uniform(&[b, ci, t], -1.0, 1.0, &mut rng);
                let w = Tensor::uniform(&[ci, 1, k], -1.0, 1.0, &mut rng);
                let err = check_linear_map(
                    &x,
                    |g| g.depthwise_conv1d(&x, &w, stride, dilation),
                    &mut rng,
                )?;
                AdjointCase {
                    name: format!("depthwise_conv1d b{b} c{ci} k{k} s{stride} d{dilation} t{t}"),
                    rel_err: err,
                }
            }
            3 => {
                let x = Tensor::uniform(&[b, ci, t], -1.0, 1.0, &mut rng);
                let w = Tensor::uniform(&[co, ci, 1], -1.0, 1.0, &mut rng);
                let err = check_linear_map(&x, |g| g.pointwise_conv1d(&x, &w, None), &mut rng)?;
                AdjointCase {
                    name: format!("pointwise_conv1d b{b} ci{ci} co{co} t{t}"),
                    rel_err: err,
                }
            }
            _ => {
                let x = Tensor::uniform(&[b, t, ci], -1.0, 1.0, &mut rng);
                let w = Tensor::uniform(&[co, ci], -1.0, 1.0, &mut rng);
                let err = check_linear_map(&x, |g| g.linear(&x, &w, None), &mut rng)?;
                AdjointCase {
                    name: format!("linear b{b} rows{t} ci{ci} co{co}"),
                    rel_err: err,
                }
            }
        };
        out.push(case);
    }
    Ok(out)
}

/// conv_transpose1d's forward must equal conv1d's backward-data map with the
/// same (axis-permuted) weight. Returns the max absolute deviation over
/// random geometries.
pub fn conv_transpose_matches_backward_data(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let b = rng.gen_range(1..=2usize);
        let ci = rng.gen_range(1..=3usize);
        let co = rng.gen_range(1..=3usize);
        let k = rng.gen_range(1..=4usize);
        let stride = rng.gen_range(1..=3usize);
        let t = k + rng.gen_range(0..10usize);

        let x = Tensor::uniform(&[b, ci, t], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[co, ci, k], -1.0, 1.0, &mut rng);
        // Backward-data of conv1d for cotangent dy:
        let g = Graph::new();
        let y = g.conv1d(&x, &w, None, stride, 1)?;
        let t_out = y.shape()[2];
        let dy: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        x.zero_grad();
        let proj = g.dot_const(&y, &dy)?;
        g.backward(&proj)?;
        let dx = x.grad_vec();

        // Same map as a conv_transpose1d forward on dy. The conv weight
        // (C_out, C_in, K) already has the transposed op's (C_in', C_out', K)
        // layout, so it is shared verbatim.
        let g2 = Graph::new();
        let dy_t = Tensor::from_vec(&[b, co, t_out], dy)?;
        let wt_t = Tensor::from_vec(&[co, ci, k], w.to_vec())?;
        let rebuilt = g2.conv_transpose1d(&dy_t, &wt_t, None, stride)?;
        let t_rebuilt = rebuilt.shape()[2]; // (T_out−1)·s + K ≤ T
        let rd = rebuilt.to_vec();
        for bi in 0..b {
            for c_i in 0..ci {
                for ti in 0..t {
                    let got = if ti < t_rebuilt {
                        rd[(bi * ci + c_i) * t_rebuilt + ti]
                    } else {
                        0.0 // samples past the last window never contribute
                    };
                    let want = dx[(bi * ci + c_i) * t + ti];
                    worst = worst.max((got - want).abs());
                }
            }
        }
    }
    Ok(worst)
}
