//! Mask-based separator over a learned frame representation: a strided conv
//! front-end, a stack of dilated depthwise-separable residual blocks whose
//! summed skip outputs drive a nonnegative per-source mask, and a shared
//! transposed-conv decoder back to the waveform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::PadMode;
use crate::tensor::{Graph, Scalar, Tensor};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvTasnetSpec {
    pub frontend_kernel: usize,
    pub frontend_stride: usize,
    pub frontend_channels: usize,
    /// Width inside the residual stack (the bottleneck pointwise conv maps
    /// the front-end width down to this).
    pub block_channels: usize,
    /// Repeats of the dilation cycle.
    pub repeats: usize,
    /// Blocks per repeat; block n (flattened, 0-based) dilates by 2^(n mod N).
    pub blocks_per_repeat: usize,
    pub block_kernel: usize,
    pub sources: usize,
    pub audio_channels: usize,
}

impl ConvTasnetSpec {
    /// Stereo music configuration: wider front-end (kernel 20, stride 10,
    /// 256 channels) and a deeper stack (4 repeats of 10 blocks).
    pub fn music() -> Self {
        ConvTasnetSpec {
            frontend_kernel: 20,
            frontend_stride: 10,
            frontend_channels: 256,
            block_channels: 256,
            repeats: 4,
            blocks_per_repeat: 10,
            block_kernel: 3,
            sources: 4,
            audio_channels: 2,
        }
    }

    /// Original single-channel speech configuration.
    pub fn speech() -> Self {
        ConvTasnetSpec {
            frontend_kernel: 16,
            frontend_stride: 8,
            frontend_channels: 128,
            block_channels: 128,
            repeats: 3,
            blocks_per_repeat: 8,
            block_kernel: 3,
            sources: 4,
            audio_channels: 1,
        }
    }

    /// Small configuration for fast desk-scale runs.
    pub fn desk() -> Self {
        ConvTasnetSpec {
            frontend_kernel: 20,
            frontend_stride: 10,
            frontend_channels: 16,
            block_channels: 16,
            repeats: 2,
            blocks_per_repeat: 4,
            block_kernel: 3,
            sources: 4,
            audio_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frontend_kernel == 0
            || self.frontend_stride == 0
            || self.frontend_kernel < self.frontend_stride
        {
            return Err(Error::config("need frontend kernel ≥ stride ≥ 1"));
        }
        if self.frontend_channels == 0 || self.block_channels == 0 {
            return Err(Error::config("channel widths must be ≥ 1"));
        }
        if self.repeats == 0 || self.blocks_per_repeat == 0 {
            return Err(Error::config("need at least one residual block"));
        }
        if self.block_kernel % 2 == 0 {
            return Err(Error::config(
                "block kernel must be odd to pad symmetrically",
            ));
        }
        if self.sources == 0 || self.audio_channels == 0 {
            return Err(Error::config("sources and audio_channels must be ≥ 1"));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.repeats * self.blocks_per_repeat
    }

    /// Dilation of flattened block n: 2^(n mod blocks_per_repeat).
    pub fn dilation(&self, n: usize) -> usize {
        1usize << (n % self.blocks_per_repeat)
    }

    pub fn dilation_schedule(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|n| self.dilation(n)).collect()
    }

    /// Receptive field of the residual stack in front-end frames:
    /// 1 + Σ over blocks of (K−1)·dilation.
    pub fn receptive_field_frames(&self) -> usize {
        1 + self
            .dilation_schedule()
            .iter()
            .map(|d| (self.block_kernel - 1) * d)
            .sum::<usize>()
    }

    /// Receptive field in waveform samples.
    pub fn receptive_field_samples(&self) -> usize {
        (self.receptive_field_frames() - 1) * self.frontend_stride + self.frontend_kernel
    }
}

struct Block<S: Scalar> {
    pw_w: Tensor<S>,
    pw_b: Tensor<S>,
    pw_slope: Tensor<S>,
    norm1_g: Tensor<S>,
    norm1_b: Tensor<S>,
    dw_w: Tensor<S>,
    dw_slope: Tensor<S>,
    norm2_g: Tensor<S>,
    norm2_b: Tensor<S>,
    res_w: Tensor<S>,
    res_b: Tensor<S>,
    skip_w: Tensor<S>,
    skip_b: Tensor<S>,
    dilation: usize,
}

pub struct ConvTasnetModel<S: Scalar> {
    pub spec: ConvTasnetSpec,
    enc_w: Tensor<S>,
    enc_b: Tensor<S>,
    bott_w: Tensor<S>,
    bott_b: Tensor<S>,
    blocks: Vec<Block<S>>,
    /// Bias-free so all-zero skips give an exactly zero mask.
    mask_w: Tensor<S>,
    /// Bias-free so a zero mask decodes to exact silence.
    dec_w: Tensor<S>,
}

fn uniform_pm<S: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    Tensor::uniform(shape, -bound, bound, rng)
}

impl<S: Scalar> ConvTasnetModel<S> {
    pub fn new(spec: ConvTasnetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fk, fc, bc) = (
            spec.frontend_kernel,
            spec.frontend_channels,
            spec.block_channels,
        );

        let enc_bound = 1.0 / ((spec.audio_channels * fk) as f64).sqrt();
        let enc_w = uniform_pm(&[fc, spec.audio_channels, fk], enc_bound, &mut rng);
        let enc_b = uniform_pm(&[fc], enc_bound, &mut rng);

        let bott_bound = 1.0 / (fc as f64).sqrt();
        let bott_w = uniform_pm(&[bc, fc, 1], bott_bound, &mut rng);
        let bott_b = uniform_pm(&[bc], bott_bound, &mut rng);

        let mut blocks = Vec::with_capacity(spec.num_blocks());
        for n in 0..spec.num_blocks() {
            let pw_bound = 1.0 / (bc as f64).sqrt();
            let dw_bound = 1.0 / (spec.block_kernel as f64).sqrt();
            blocks.push(Block {
                pw_w: uniform_pm(&[bc, bc, 1], pw_bound, &mut rng),
                pw_b: uniform_pm(&[bc], pw_bound, &mut rng),
                pw_slope: Tensor::from_vec(&[bc], vec![S::from_f64(0.25); bc])?,
                norm1_g: Tensor::from_vec(&[bc], vec![S::ONE; bc])?,
                norm1_b: Tensor::zeros(&[bc]),
                dw_w: uniform_pm(&[bc, 1, spec.block_kernel], dw_bound, &mut rng),
                dw_slope: Tensor::from_vec(&[bc], vec![S::from_f64(0.25); bc])?,
                norm2_g: Tensor::from_vec(&[bc], vec![S::ONE; bc])?,
                norm2_b: Tensor::zeros(&[bc]),
                res_w: uniform_pm(&[bc, bc, 1], pw_bound, &mut rng),
                res_b: uniform_pm(&[bc], pw_bound, &mut rng),
                skip_w: uniform_pm(&[bc, bc, 1], pw_bound, &mut rng),
                skip_b: uniform_pm(&[bc], pw_bound, &mut rng),
                dilation: spec.dilation(n),
            });
        }

        let mask_bound = 1.0 / (bc as f64).sqrt();
        let mask_w = uniform_pm(&[spec.sources * fc, bc, 1], mask_bound, &mut rng);

        let dec_bound = 1.0 / ((fc * fk) as f64).sqrt();
        let dec_w = uniform_pm(&[fc, spec.audio_channels, fk], dec_bound, &mut rng);

        Ok(ConvTasnetModel {
            spec,
            enc_w,
            enc_b,
            bott_w,
            bott_b,
            blocks,
            mask_w,
            dec_w,
        })
    }

    pub fn params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = vec![
            ("encoder.weight".to_string(), self.enc_w.clone()),
            ("encoder.bias".to_string(), self.enc_b.clone()),
            ("bottleneck.weight".to_string(), self.bott_w.clone()),
            ("bottleneck.bias".to_string(), self.bott_b.clone()),
        ];
        let n_per = self.spec.blocks_per_repeat;
        for (i, blk) in self.blocks.iter().enumerate() {
            let p = format!("block.{}.{}", i / n_per, i % n_per);
            out.push((format!("{p}.pw.weight"), blk.pw_w.clone()));
            out.push((format!("{p}.pw.bias"), blk.pw_b.clone()));
            out.push((format!("{p}.pw.slope"), blk.pw_slope.clone()));
            out.push((format!("{p}.norm1.gain"), blk.norm1_g.clone()));
            out.push((format!("{p}.norm1.bias"), blk.norm1_b.clone()));
            out.push((format!("{p}.dw.weight"), blk.dw_w.clone()));
            out.push((format!("{p}.dw.slope"), blk.dw_slope.clone()));
            out.push((format!("{p}.norm2.gain"), blk.norm2_g.clone()));
            out.push((format!("{p}.norm2.bias"), blk.norm2_b.clone()));
            out.push((format!("{p}.res.weight"), blk.res_w.clone()));
            out.push((format!("{p}.res.bias"), blk.res_b.clone()));
            out.push((format!("{p}.skip.weight"), blk.skip_w.clone()));
            out.push((format!("{p}.skip.bias"), blk.skip_b.clone()));
        }
        out.push(("mask_head.weight".to_string(), self.mask_w.clone()));
        out.push(("decoder.weight".to_string(), self.dec_w.clone()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// (B, C, T) → (B, S, C, T) with tail padding so front-end frames tile
    /// the input exactly; output trimmed back to T.
    pub fn forward(&self, g: &Graph<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_mode(g, x, PadMode::Zero)
    }

    /// The nonnegative per-source masks on the front-end representation:
    /// (B, S·frontend_channels, frames).
    pub fn masks(&self, g: &Graph<S>, x: &Tensor<S>, mode: PadMode) -> Result<Tensor<S>> {
        Ok(self.encode_and_mask(g, x, mode)?.1)
    }

    /// `PadMode::Circular` runs the whole pipeline with wraparound padding
    /// (front-end tiling, block convs, decoder overlap-add), making it
    /// exactly equivariant to circular shifts by front-end stride multiples.
    pub fn forward_mode(&self, g: &Graph<S>, x: &Tensor<S>, mode: PadMode) -> Result<Tensor<S>> {
        let spec = &self.spec;
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "expected (batch, channels, time) input, got {shape:?}"
            )));
        }
        let (b, t) = (shape[0], shape[2]);
        let (fk, fs) = (spec.frontend_kernel, spec.frontend_stride);
        let (encoded, masks) = self.encode_and_mask(g, x, mode)?;

        // Apply each source's mask to the shared encoded representation and
        // decode with the shared transposed conv.
        let fc = spec.frontend_channels;
        let mut seq: Option<Tensor<S>> = None; // (B, T, S·C) accumulating
        for s in 0..spec.sources {
            let m = g.narrow(&masks, 1, s * fc, fc)?;
            let masked = g.mul(&m, &encoded)?;
            let dec = g.conv_transpose1d(&masked, &self.dec_w, None, fs)?;
            let dec = match mode {
                PadMode::Zero => g.narrow(&dec, 2, 0, t)?,
                PadMode::Circular => {
                    // Fold the wrapped tail back onto the head.
                    let body = g.narrow(&dec, 2, 0, t)?;
                    let tail = g.narrow(&dec, 2, t, fk - fs)?;
                    let tail_padded = g.pad1d(&tail, 0, t - (fk - fs), PadMode::Zero)?;
                    g.add(&body, &tail_padded)?
                }
            };
            let dec = g.transpose_12(&dec)?;
            seq = Some(match seq {
                None => dec,
                Some(acc) => g.concat_last(&acc, &dec)?,
            });
        }
        let stacked = g.transpose_12(&seq.unwrap())?; // (B, S·C, T)
        g.reshape(&stacked, &[b, spec.sources, spec.audio_channels, t])
    }

    fn encode_and_mask(
        &self,
        g: &Graph<S>,
        x: &Tensor<S>,
        mode: PadMode,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let spec = &self.spec;
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "expected (batch, channels, time) input, got {shape:?}"
            )));
        }
        let (c, t) = (shape[1], shape[2]);
        if c != spec.audio_channels {
            return Err(Error::shape(format!(
                "model takes {} audio channels, input has {c}",
                spec.audio_channels
            )));
        }
        if t < spec.frontend_kernel {
            return Err(Error::shape(format!(
                "need at least {} samples, got {t}",
                spec.frontend_kernel
            )));
        }
        if !x.all_finite() {
            return Err(Error::numeric("non-finite input"));
        }
        let (fk, fs) = (spec.frontend_kernel, spec.frontend_stride);

        let h = match mode {
            PadMode::Zero => {
                let rem = (t - fk) % fs;
                let pad = if rem == 0 { 0 } else { fs - rem };
                if pad > 0 {
                    g.pad1d(x, 0, pad, PadMode::Zero)?
                } else {
                    x.clone()
                }
            }
            PadMode::Circular => {
                if t % fs != 0 {
                    return Err(Error::shape(format!(
                        "circular mode needs time divisible by stride {fs}, got {t}"
                    )));
                }
                // Wrap (kernel − stride) samples so M = T/stride frames tile
                // the circle exactly.
                g.pad1d(x, 0, fk - fs, PadMode::Circular)?
            }
        };

        let encoded = g.conv1d(&h, &self.enc_w, Some(&self.enc_b), fs, 1)?;

        let mut hb = g.conv1d(&encoded, &self.bott_w, Some(&self.bott_b), 1, 1)?;
        let mut skip_sum: Option<Tensor<S>> = None;
        for blk in &self.blocks {
            let y = g.conv1d(&hb, &blk.pw_w, Some(&blk.pw_b), 1, 1)?;
            let y = g.prelu(&y, &blk.pw_slope)?;
            let y = g.global_layer_norm(&y, &blk.norm1_g, &blk.norm1_b, NORM_EPS)?;
            let span = (spec.block_kernel - 1) * blk.dilation;
            let y = g.pad1d(&y, span / 2, span / 2, mode)?;
            let y = g.depthwise_conv1d(&y, &blk.dw_w, 1, blk.dilation)?;
            let y = g.prelu(&y, &blk.dw_slope)?;
            let y = g.global_layer_norm(&y, &blk.norm2_g, &blk.norm2_b, NORM_EPS)?;
            let res = g.conv1d(&y, &blk.res_w, Some(&blk.res_b), 1, 1)?;
            let skip = g.conv1d(&y, &blk.skip_w, Some(&blk.skip_b), 1, 1)?;
            hb = g.add(&hb, &res)?;
            skip_sum = Some(match skip_sum {
                None => skip,
                Some(acc) => g.add(&acc, &skip)?,
            });
        }

        let masks = g.conv1d(&skip_sum.unwrap(), &self.mask_w, None, 1, 1)?;
        let masks = g.relu(&masks);
        Ok((encoded, masks))
    }
}

/// Max |f(roll(x, shift)) − roll(f(x), shift)| over all coordinates: how far
/// `forward` is from commuting with a circular time shift.
pub fn equivariance_deviation<S: Scalar, F>(
    forward: F,
    x: &Tensor<S>,
    shift: usize,
) -> Result<f64>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>>,
{
    let y = forward(x)?;
    let xs = roll_time(x, shift)?;
    let ys = forward(&xs)?;
    let y_rolled = roll_time(&y, shift)?;
    if ys.shape() != y_rolled.shape() {
        return Err(Error::shape("outputs disagree in shape"));
    }
    let a = ys.to_vec();
    let b = y_rolled.to_vec();
    Ok(a.iter()
        .zip(&b)
        .map(|(p, q)| (p.to_f64() - q.to_f64()).abs())
        .fold(0.0, f64::max))
}

/// Circularly shifts the last axis right by `shift` samples.
pub fn roll_time<S: Scalar>(x: &Tensor<S>, shift: usize) -> Result<Tensor<S>> {
    let shape = x.shape().to_vec();
    let t = *shape
        .last()
        .ok_or_else(|| Error::shape("roll_time needs at least one axis"))?;
    if t == 0 {
        return Err(Error::shape("empty time axis"));
    }
    let s = shift % t;
    let d = x.to_vec();
    let rows = x.numel() / t;
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..rows {
        let row = &d[r * t..(r + 1) * t];
        out.extend_from_slice(&row[t - s..]);
        out.extend_from_slice(&row[..t - s]);
    }
    Tensor::from_vec(&shape, out)
}
