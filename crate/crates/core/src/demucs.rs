//! Waveform U-net separator: strided-conv encoder with gated linear units,
//! a bidirectional-LSTM bottleneck, and a transposed-conv decoder with
//! additive same-index skip connections. No normalization layers anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{BiLstm, PadMode};
use crate::tensor::{Graph, Scalar, Tensor};

/// Architecture hyper-parameters. `channels(i)` doubles per block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemucsSpec {
    /// Number of encoder (and decoder) blocks.
    pub depth: usize,
    /// Channels out of the first encoder block.
    pub initial_channels: usize,
    /// Per-block channel multiplier.
    pub growth: usize,
    /// Encoder conv / decoder transposed-conv kernel.
    pub kernel: usize,
    pub stride: usize,
    pub lstm_layers: usize,
    /// Decoder per-block context conv kernel (odd, length preserving).
    pub context: usize,
    pub sources: usize,
    pub audio_channels: usize,
    /// Reference scale for the post-init weight rescaling.
    pub rescale: f64,
    /// Gated linear units everywhere (false swaps every GLU for a ReLU and
    /// halves the corresponding conv widths; shape contract is unchanged).
    pub glu: bool,
    /// Decoder context activation: true = GLU, false = ReLU variant.
    pub decoder_glu: bool,
}

impl Default for DemucsSpec {
    fn default() -> Self {
        DemucsSpec {
            depth: 6,
            initial_channels: 8,
            growth: 2,
            kernel: 8,
            stride: 4,
            lstm_layers: 2,
            context: 3,
            sources: 4,
            audio_channels: 2,
            rescale: 0.1,
            glu: true,
            decoder_glu: true,
        }
    }
}

impl DemucsSpec {
    /// Full-scale configuration (initial width 100 → final width 3200).
    pub fn full_scale() -> Self {
        DemucsSpec {
            initial_channels: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth must be ≥ 1"));
        }
        if self.initial_channels == 0 || self.growth == 0 {
            return Err(Error::config("channel widths must be ≥ 1"));
        }
        if self.kernel <= self.stride || self.stride == 0 {
            return Err(Error::config("need kernel > stride ≥ 1"));
        }
        if self.context % 2 == 0 || self.context == 0 {
            return Err(Error::config("context kernel must be odd"));
        }
        if self.lstm_layers == 0 {
            return Err(Error::config("lstm_layers must be ≥ 1"));
        }
        if self.sources == 0 || self.audio_channels == 0 {
            return Err(Error::config("sources and audio_channels must be ≥ 1"));
        }
        if !(self.rescale > 0.0) {
            return Err(Error::config("rescale reference must be > 0"));
        }
        Ok(())
    }

    /// Channels out of encoder block `i` (1-based): C1·growth^(i−1).
    pub fn channels(&self, i: usize) -> usize {
        self.initial_channels * self.growth.pow((i - 1) as u32)
    }

    pub fn channel_sequence(&self) -> Vec<usize> {
        (1..=self.depth).map(|i| self.channels(i)).collect()
    }

    /// Smallest T' ≥ t that survives `depth` strided convs and returns to
    /// exactly T' through the mirrored transposed convs. Fixed point:
    /// valid_length(valid_length(t)) == valid_length(t).
    pub fn valid_length(&self, t: usize) -> usize {
        assert!(t >= 1);
        // Lengths that reconstruct exactly are up^L(f) for f ≥ 1, spaced by
        // stride^L: up(x) = (x−1)·stride + kernel is exactly inverted by the
        // conv length map.
        let mut base = 1usize;
        for _ in 0..self.depth {
            base = (base - 1) * self.stride + self.kernel;
        }
        let step = self.stride.pow(self.depth as u32);
        if t <= base {
            base
        } else {
            base + (t - base).div_ceil(step) * step
        }
    }
}

struct EncBlock<S: Scalar> {
    conv_w: Tensor<S>,
    conv_b: Tensor<S>,
    pw_w: Tensor<S>,
    pw_b: Tensor<S>,
}

struct DecBlock<S: Scalar> {
    ctx_w: Tensor<S>,
    ctx_b: Tensor<S>,
    up_w: Tensor<S>,
    up_b: Tensor<S>,
}

pub struct DemucsModel<S: Scalar> {
    pub spec: DemucsSpec,
    enc: Vec<EncBlock<S>>,
    lstm: BiLstm<S>,
    lin_w: Tensor<S>,
    lin_b: Tensor<S>,
    /// Run order: index 0 is the innermost (deepest) decoder block.
    dec: Vec<DecBlock<S>>,
}

fn uniform_pm<S: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Divides each weight tensor by sqrt(std(w)/reference) so that afterwards
/// std(w') = sqrt(reference·std(w)). Biases are left alone by the caller.
pub fn rescale_weights<S: Scalar>(weights: &[&Tensor<S>], reference: f64) -> Result<()> {
    for w in weights {
        let std = tensor_std(w);
        if !(std > 0.0) || w.numel() < 2 {
            return Err(Error::numeric(
                "cannot rescale a zero-variance weight tensor",
            ));
        }
        let alpha = std / reference;
        let scale = S::from_f64(1.0 / alpha.sqrt());
        for v in w.data_mut().iter_mut() {
            *v = *v * scale;
        }
    }
    Ok(())
}

/// Sample standard deviation (n−1 denominator), accumulated in f64.
pub fn tensor_std<S: Scalar>(t: &Tensor<S>) -> f64 {
    let d = t.data();
    let n = d.len();
    if n < 2 {
        return 0.0;
    }
    let mean = d.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
    let ss = d
        .iter()
        .map(|v| {
            let c = v.to_f64() - mean;
            c * c
        })
        .sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

impl<S: Scalar> DemucsModel<S> {
    /// Builds and initializes: Kaiming-uniform baseline on every layer, then
    /// the std-targeting rescale on conv and transposed-conv weights only.
    pub fn new(spec: DemucsSpec, seed: u64) -> Result<Self> {
        let model = Self::new_unscaled(spec, seed)?;
        let ws: Vec<&Tensor<S>> = model
            .conv_weights()
            .into_iter()
            .collect();
        rescale_weights(&ws, model.spec.rescale)?;
        drop(ws);
        Ok(model)
    }

    /// Baseline init without the rescale pass (for measuring its effect).
    pub fn new_unscaled(spec: DemucsSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = spec.depth;
        let k = spec.kernel;
        let mut enc = Vec::with_capacity(l);
        for i in 1..=l {
            let cin = if i == 1 {
                spec.audio_channels
            } else {
                spec.channels(i - 1)
            };
            let c = spec.channels(i);
            let bound = 1.0 / ((cin * k) as f64).sqrt();
            let conv_w = uniform_pm(&[c, cin, k], bound, &mut rng);
            let conv_b = uniform_pm(&[c], bound, &mut rng);
            let pw_out = if spec.glu { 2 * c } else { c };
            let pw_bound = 1.0 / (c as f64).sqrt();
            let pw_w = uniform_pm(&[pw_out, c, 1], pw_bound, &mut rng);
            let pw_b = uniform_pm(&[pw_out], pw_bound, &mut rng);
            enc.push(EncBlock {
                conv_w,
                conv_b,
                pw_w,
                pw_b,
            });
        }

        let cl = spec.channels(l);
        let lstm = BiLstm::new(cl, cl, spec.lstm_layers, &mut rng);
        let lin_bound = 1.0 / ((2 * cl) as f64).sqrt();
        let lin_w = uniform_pm(&[cl, 2 * cl], lin_bound, &mut rng);
        let lin_b = uniform_pm(&[cl], lin_bound, &mut rng);

        let mut dec = Vec::with_capacity(l);
        for i in (1..=l).rev() {
            let c = spec.channels(i);
            let ctx_out = if spec.glu && spec.decoder_glu { 2 * c } else { c };
            let ctx_bound = 1.0 / ((c * spec.context) as f64).sqrt();
            let ctx_w = uniform_pm(&[ctx_out, c, spec.context], ctx_bound, &mut rng);
            let ctx_b = uniform_pm(&[ctx_out], ctx_bound, &mut rng);
            let up_out = if i > 1 {
                spec.channels(i - 1)
            } else {
                spec.sources * spec.audio_channels
            };
            let up_bound = 1.0 / ((c * k) as f64).sqrt();
            let up_w = uniform_pm(&[c, up_out, k], up_bound, &mut rng);
            let up_b = uniform_pm(&[up_out], up_bound, &mut rng);
            dec.push(DecBlock {
                ctx_w,
                ctx_b,
                up_w,
                up_b,
            });
        }

        Ok(DemucsModel {
            spec,
            enc,
            lstm,
            lin_w,
            lin_b,
            dec,
        })
    }

    fn conv_weights(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for b in &self.enc {
            out.push(&b.conv_w);
            out.push(&b.pw_w);
        }
        for b in &self.dec {
            out.push(&b.ctx_w);
            out.push(&b.up_w);
        }
        out
    }

    /// Named handles onto every trainable tensor (shared buffers).
    pub fn params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (j, b) in self.enc.iter().enumerate() {
            let i = j + 1;
            out.push((format!("enc.{i}.conv.weight"), b.conv_w.clone()));
            out.push((format!("enc.{i}.conv.bias"), b.conv_b.clone()));
            out.push((format!("enc.{i}.pw.weight"), b.pw_w.clone()));
            out.push((format!("enc.{i}.pw.bias"), b.pw_b.clone()));
        }
        out.extend(self.lstm.params("lstm"));
        out.push(("lstm_linear.weight".to_string(), self.lin_w.clone()));
        out.push(("lstm_linear.bias".to_string(), self.lin_b.clone()));
        for (j, b) in self.dec.iter().enumerate() {
            let i = self.spec.depth - j;
            out.push((format!("dec.{i}.ctx.weight"), b.ctx_w.clone()));
            out.push((format!("dec.{i}.ctx.bias"), b.ctx_b.clone()));
            out.push((format!("dec.{i}.up.weight"), b.up_w.clone()));
            out.push((format!("dec.{i}.up.bias"), b.up_b.clone()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// (B, C0, T) → (B, S, C0, T). Pads to the nearest valid length
    /// internally and trims back, so any T ≥ 1 works.
    pub fn forward(&self, g: &Graph<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_inner(g, x, None)
    }

    /// Forward pass that also reports std of each encoder block's output —
    /// the probe behind the initialization quality check.
    pub fn forward_with_stats(
        &self,
        g: &Graph<S>,
        x: &Tensor<S>,
        stats: &mut Vec<f64>,
    ) -> Result<Tensor<S>> {
        self.forward_inner(g, x, Some(stats))
    }

    fn forward_inner(
        &self,
        g: &Graph<S>,
        x: &Tensor<S>,
        mut stats: Option<&mut Vec<f64>>,
    ) -> Result<Tensor<S>> {
        let spec = &self.spec;
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "expected (batch, channels, time) input, got {shape:?}"
            )));
        }
        let (b, c0, t) = (shape[0], shape[1], shape[2]);
        if c0 != spec.audio_channels {
            return Err(Error::shape(format!(
                "model takes {} audio channels, input has {c0}",
                spec.audio_channels
            )));
        }
        if t == 0 {
            return Err(Error::shape("empty time axis"));
        }
        if !x.all_finite() {
            return Err(Error::numeric("non-finite input"));
        }

        let tv = spec.valid_length(t);
        let mut h = if tv > t {
            g.pad1d(x, 0, tv - t, PadMode::Zero)?
        } else {
            x.clone()
        };

        let mut skips: Vec<Tensor<S>> = Vec::with_capacity(spec.depth);
        for blk in &self.enc {
            h = g.conv1d(&h, &blk.conv_w, Some(&blk.conv_b), spec.stride, 1)?;
            h = g.relu(&h);
            h = g.conv1d(&h, &blk.pw_w, Some(&blk.pw_b), 1, 1)?;
            h = if spec.glu { g.glu(&h)? } else { g.relu(&h) };
            if let Some(st) = stats.as_deref_mut() {
                st.push(tensor_std(&h));
            }
            skips.push(h.clone());
        }

        // Bottleneck runs over (B, frames, C_L).
        let seq = g.transpose_12(&h)?;
        let seq = self.lstm.forward(g, &seq)?;
        let seq = g.linear(&seq, &self.lin_w, Some(&self.lin_b))?;
        h = g.transpose_12(&seq)?;

        for (j, blk) in self.dec.iter().enumerate() {
            let i = spec.depth - j; // block index, L..1
            h = g.add(&h, &skips[i - 1])?;
            let p = (spec.context - 1) / 2;
            h = g.pad1d(&h, p, p, PadMode::Zero)?;
            h = g.conv1d(&h, &blk.ctx_w, Some(&blk.ctx_b), 1, 1)?;
            h = if spec.glu && spec.decoder_glu {
                g.glu(&h)?
            } else {
                g.relu(&h)
            };
            h = g.conv_transpose1d(&h, &blk.up_w, Some(&blk.up_b), spec.stride)?;
            if i > 1 {
                h = g.relu(&h);
            }
        }

        if tv > t {
            h = g.narrow(&h, 2, 0, t)?;
        }
        g.reshape(&h, &[b, spec.sources, spec.audio_channels, t])
    }
}
