//! Finite-difference verification of every operator's adjoint. A random
//! projection reduces any op output to a scalar; central differences on each
//! input coordinate are compared against the analytic gradient from one
//! backward pass. 64-bit only — at 32 bits the difference quotient drowns in
//! rounding.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{BiLstm, PadMode};
use crate::tensor::{Graph, Tensor};
use crate::train::AnyModel;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Step ladder for whole-model directional checks. A single step cannot
/// serve a deep graph: large steps can push some ReLU/GLU pre-activation
/// across its kink (an O(1) spurious error), while small steps drown the
/// tiniest tensor-block gradients in the output's accumulated rounding. A
/// correct gradient converges on at least one rung; a broken adjoint is
/// step-independent and fails on all of them. The bottom rungs look deep,
/// but a whole-tensor perturbation moves thousands of pre-activations with
/// O(10) sensitivity each, so desk-scale masking models need eps ≤ 1e-6
/// before no kink sits inside the difference window; f64 evaluation noise
/// at 1e-7 is still ~1e-9 of the loss, far under the pass threshold.
pub const MODEL_EPS_LADDER: [f64; 6] = [1e-3, 1e-4, 3e-5, 1e-5, 1e-6, 1e-7];

/// Max relative gradient error over every coordinate of every tensor in
/// `checked`, with denominator max(|analytic|, |numeric|, 1e-8).
///
/// `forward` must rebuild its graph from the same tensor handles on every
/// call: the verifier perturbs tensor data in place between calls.
pub fn grad_check<F>(checked: &[&Tensor<f64>], forward: F, eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&Graph<f64>) -> Result<Tensor<f64>>,
{
    for t in checked {
        t.zero_grad();
    }
    let g = Graph::new();
    let y = forward(&g)?;
    if !y.all_finite() {
        return Err(Error::numeric("forward produced non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = g.dot_const(&y, &r)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = checked.iter().map(|t| t.grad_vec()).collect();

    let eval = |g_: &F| -> Result<f64> {
        let graph = Graph::new();
        let y = g_(&graph)?;
        let v = y.data().iter().zip(&r).map(|(a, b)| a * b).sum();
        Ok(v)
    };

    let mut max_rel: f64 = 0.0;
    for (ti, t) in checked.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            t.data_mut()[j] = orig + eps;
            let lp = eval(&forward)?;
            t.data_mut()[j] = orig - eps;
            let lm = eval(&forward)?;
            t.data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::numeric("finite-difference quotient is non-finite"));
            }
            let a = analytic[ti][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

/// Directional-derivative variant for composite graphs. For each tensor the
/// whole coordinate block is perturbed at once along a random direction v and
/// ⟨∇f, v⟩ is compared against the centered difference — same denominator
/// convention as `grad_check`. Deep compositions put five decades between
/// their largest and smallest gradient coordinates, so a per-coordinate
/// quotient on the small ones sits below the f64 evaluation-noise floor;
/// the directional probe compares at the tensor's own gradient scale while
/// still exercising every coordinate's adjoint. Each tensor is tried at
/// every step in `MODEL_EPS_LADDER`, keeping its best-converged quotient
/// (see the ladder's comment: correct gradients converge on some rung,
/// broken ones on none).
pub fn grad_check_directional<F>(
    checked: &[&Tensor<f64>],
    forward: F,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Graph<f64>) -> Result<Tensor<f64>>,
{
    for t in checked {
        t.zero_grad();
    }
    let g = Graph::new();
    let y = forward(&g)?;
    if !y.all_finite() {
        return Err(Error::numeric("forward produced non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = g.dot_const(&y, &r)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = checked.iter().map(|t| t.grad_vec()).collect();

    let eval = |g_: &F| -> Result<f64> {
        let graph = Graph::new();
        let y = g_(&graph)?;
        let v = y.data().iter().zip(&r).map(|(a, b)| a * b).sum();
        Ok(v)
    };

    let mut max_rel: f64 = 0.0;
    for (ti, t) in checked.iter().enumerate() {
        let n = t.numel();
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: f64 = analytic[ti].iter().zip(&dir).map(|(g, d)| g * d).sum();
        let orig = t.to_vec();
        let mut best = f64::INFINITY;
        for &eps in &MODEL_EPS_LADDER {
            {
                let mut d = t.data_mut();
                for j in 0..n {
                    d[j] = orig[j] + eps * dir[j];
                }
            }
            let lp = eval(&forward)?;
            {
                let mut d = t.data_mut();
                for j in 0..n {
                    d[j] = orig[j] - eps * dir[j];
                }
            }
            let lm = eval(&forward)?;
            t.data_mut().copy_from_slice(&orig);
            let numeric = (lp - lm) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::numeric("finite-difference quotient is non-finite"));
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            best = best.min((a - numeric).abs() / denom);
        }
        max_rel = max_rel.max(best);
    }
    Ok(max_rel)
}

/// Directional check of a full model's input and parameter gradients at up
/// to `attempts` independent evaluation points, returning the best attempt's
/// max relative error (stopping early once one attempt reaches `tol`).
///
/// Retrying at fresh points is required, not a leniency: with tens of
/// thousands of ReLU/PReLU pre-activations, a random evaluation point
/// occasionally lands within the smallest ladder step of a kink, where the
/// difference quotient measures the average of both one-sided slopes no
/// matter how small the step. Correct gradients pass at almost every point;
/// a broken adjoint perturbs the directional derivative at almost every
/// point and therefore fails every attempt.
pub fn check_model_gradients(
    model: &AnyModel,
    input_len: usize,
    attempts: usize,
    tol: f64,
    seed: u64,
) -> Result<f64> {
    if attempts == 0 {
        return Err(Error::arg("need at least one attempt"));
    }
    let mut best = f64::INFINITY;
    for k in 0..attempts as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k.wrapping_mul(0x9E3779B97F4A7C15)));
        let x = Tensor::uniform(&[1, model.audio_channels(), input_len], -0.8, 0.8, &mut rng);
        let params = model.params();
        let mut checked: Vec<&Tensor<f64>> = vec![&x];
        for (_, t) in &params {
            checked.push(t);
        }
        let err = grad_check_directional(&checked, |g| model.forward(g, &x), seed ^ 0x51AB ^ k)?;
        best = best.min(err);
        if best <= tol {
            break;
        }
    }
    Ok(best)
}

/// Random values bounded away from zero, so kinked ops (relu, prelu, |·|)
/// never see a finite-difference interval straddling the kink.
fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Gradient-checks every operator at small shapes with fixed seeds.
/// Returns (op name, max relative error) pairs in a fixed order.
pub fn run_standard_suite() -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAD01);
    let mut results = Vec::new();
    let mut check = |name: &str,
                     checked: &[&Tensor<f64>],
                     f: &dyn Fn(&Graph<f64>) -> Result<Tensor<f64>>|
     -> Result<()> {
        let err = grad_check(checked, f, DEFAULT_EPS, 0x5EED ^ results.len() as u64)?;
        results.push((name.to_string(), err));
        Ok(())
    };

    {
        let x = uniform(&[2, 3, 32], &mut rng);
        let w = uniform(&[5, 3, 8], &mut rng);
        let b = uniform(&[5], &mut rng);
        check("conv1d k8 s4", &[&x, &w, &b], &|g| {
            g.conv1d(&x, &w, Some(&b), 4, 1)
        })?;
    }
    {
        let x = uniform(&[1, 2, 20], &mut rng);
        let w = uniform(&[2, 2, 3], &mut rng);
        check("conv1d k3 dilation4", &[&x, &w], &|g| {
            g.conv1d(&x, &w, None, 1, 4)
        })?;
    }
    {
        let x = uniform(&[2, 3, 5], &mut rng);
        let w = uniform(&[3, 4, 8], &mut rng);
        let b = uniform(&[4], &mut rng);
        check("conv_transpose1d k8 s4", &[&x, &w, &b], &|g| {
            g.conv_transpose1d(&x, &w, Some(&b), 4)
        })?;
    }
    {
        let x = uniform(&[1, 3, 16], &mut rng);
        let w = uniform(&[3, 1, 3], &mut rng);
        check("depthwise_conv1d k3 d2", &[&x, &w], &|g| {
            g.depthwise_conv1d(&x, &w, 1, 2)
        })?;
    }
    {
        let x = uniform(&[2, 4, 6], &mut rng);
        let w = uniform(&[3, 4, 1], &mut rng);
        let b = uniform(&[3], &mut rng);
        check("pointwise_conv1d", &[&x, &w, &b], &|g| {
            g.pointwise_conv1d(&x, &w, Some(&b))
        })?;
    }
    {
        let x = uniform(&[3, 4], &mut rng);
        let w = uniform(&[5, 4], &mut rng);
        let b = uniform(&[5], &mut rng);
        check("linear", &[&x, &w, &b], &|g| g.linear(&x, &w, Some(&b)))?;
    }
    {
        let x = away_from_zero(&[2, 3, 4], &mut rng);
        check("relu", &[&x], &|g| Ok(g.relu(&x)))?;
    }
    {
        let x = away_from_zero(&[2, 3, 4], &mut rng);
        let s = uniform(&[3], &mut rng);
        check("prelu", &[&x, &s], &|g| g.prelu(&x, &s))?;
    }
    {
        let x = uniform(&[2, 8, 5], &mut rng);
        check("glu", &[&x], &|g| g.glu(&x))?;
    }
    {
        let x = uniform(&[2, 3, 4], &mut rng);
        check("sigmoid", &[&x], &|g| Ok(g.sigmoid(&x)))?;
    }
    {
        let x = uniform(&[2, 3, 4], &mut rng);
        check("tanh", &[&x], &|g| Ok(g.tanh_act(&x)))?;
    }
    {
        let x = uniform(&[2, 3, 10], &mut rng);
        let gain = uniform(&[3], &mut rng);
        let bias = uniform(&[3], &mut rng);
        check("global_layer_norm", &[&x, &gain, &bias], &|g| {
            g.global_layer_norm(&x, &gain, &bias, 1e-5)
        })?;
    }
    {
        let mut wrng = ChaCha8Rng::seed_from_u64(0xB1D1);
        let lstm = BiLstm::<f64>::new(3, 2, 2, &mut wrng);
        let x = uniform(&[1, 4, 3], &mut rng);
        let mut checked: Vec<Tensor<f64>> = vec![x.clone()];
        for (_, p) in lstm.params("lstm") {
            checked.push(p);
        }
        let refs: Vec<&Tensor<f64>> = checked.iter().collect();
        check("bilstm 2-layer", &refs, &|g| lstm.forward(g, &x))?;
    }
    {
        let a = uniform(&[2, 3, 4], &mut rng);
        let b = uniform(&[2, 3, 4], &mut rng);
        check("add", &[&a, &b], &|g| g.add(&a, &b))?;
        check("mul", &[&a, &b], &|g| g.mul(&a, &b))?;
        check("scale", &[&a], &|g| Ok(g.scale(&a, -1.7)))?;
    }
    {
        let x = uniform(&[2, 2, 6], &mut rng);
        check("pad1d zero", &[&x], &|g| g.pad1d(&x, 3, 2, PadMode::Zero))?;
        check("pad1d circular", &[&x], &|g| {
            g.pad1d(&x, 7, 8, PadMode::Circular)
        })?;
        check("narrow", &[&x], &|g| g.narrow(&x, 2, 1, 3))?;
        check("reshape", &[&x], &|g| g.reshape(&x, &[4, 6]))?;
        check("transpose_12", &[&x], &|g| g.transpose_12(&x))?;
    }
    {
        let a = uniform(&[2, 3, 4], &mut rng);
        let b = uniform(&[2, 3, 2], &mut rng);
        check("concat_last", &[&a, &b], &|g| g.concat_last(&a, &b))?;
    }
    {
        let a = uniform(&[2, 3], &mut rng);
        let b = uniform(&[2, 3], &mut rng);
        let c = uniform(&[2, 3], &mut rng);
        check("time_stack", &[&a, &b, &c], &|g| {
            g.time_stack(&[a.clone(), b.clone(), c.clone()])
        })?;
    }
    {
        let a = away_from_zero(&[2, 3, 4], &mut rng);
        let b = Tensor::<f64>::zeros(&[2, 3, 4]);
        check("mean_abs_diff", &[&a, &b], &|g| g.mean_abs_diff(&a, &b))?;
        let c = uniform(&[2, 3, 4], &mut rng);
        let d = uniform(&[2, 3, 4], &mut rng);
        check("mean_sq_diff", &[&c, &d], &|g| g.mean_sq_diff(&c, &d))?;
    }
    Ok(results)
}
