//! Whole-track separation. The U-net runs unchunked (it normalizes nothing,
//! so length only costs memory); the masking network is run on consecutive
//! non-overlapping chunks because its global layer norm couples statistics
//! across the whole input. Shift stabilization averages the outputs of
//! several front-padded copies of the input, undoing each pad.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::audio::{SourceSet, Waveform, SOURCE_NAMES};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};
use crate::train::AnyModel;

pub const DEFAULT_CHUNK_SECONDS: f64 = 8.0;
pub const DEFAULT_SHIFTS: usize = 10;
pub const DEFAULT_MAX_SHIFT_SECONDS: f64 = 0.5;

fn stem_name(i: usize, total: usize) -> String {
    if total == SOURCE_NAMES.len() {
        SOURCE_NAMES[i].to_string()
    } else {
        format!("source{i}")
    }
}

/// One forward pass over the whole waveform; returns per-source stems.
pub fn forward_waveform(model: &AnyModel, x: &Waveform) -> Result<SourceSet> {
    if x.is_empty() {
        return Err(Error::arg("cannot separate an empty track"));
    }
    if x.channels() != model.audio_channels() {
        return Err(Error::shape(format!(
            "model expects {} channels, track has {}",
            model.audio_channels(),
            x.channels()
        )));
    }
    let (c, t) = (x.channels(), x.len());
    let input = Tensor::from_vec(&[1, c, t], x.samples().to_vec())?;
    let g = Graph::new();
    let est = model.forward(&g, &input)?;
    let s = est.shape()[1];
    let data = est.to_vec();
    let mut out = SourceSet::new();
    for src in 0..s {
        let mut chans = Vec::with_capacity(c);
        for ch in 0..c {
            let base = (src * c + ch) * t;
            chans.push(data[base..base + t].to_vec());
        }
        out.push(&stem_name(src, s), Waveform::from_channels(chans, x.sample_rate())?)?;
    }
    Ok(out)
}

/// Splits the track into consecutive non-overlapping chunks, separates each
/// independently, and concatenates. The last chunk is zero-padded to full
/// length and the output trimmed, so output length equals input length.
/// No cross-fade is applied.
pub fn separate_chunked(model: &AnyModel, x: &Waveform, chunk_seconds: f64) -> Result<SourceSet> {
    if !(chunk_seconds > 0.0) {
        return Err(Error::arg("chunk length must be positive"));
    }
    if x.is_empty() {
        return Err(Error::arg("cannot separate an empty track"));
    }
    let chunk_n = (chunk_seconds * x.sample_rate() as f64).round() as usize;
    if chunk_n == 0 {
        return Err(Error::arg("chunk shorter than one sample"));
    }
    let t = x.len();
    let c = x.channels();
    let num_chunks = t.div_ceil(chunk_n);
    let mut stems: Vec<Vec<Vec<f64>>> = Vec::new(); // [source][channel][samples]
    let mut names: Vec<String> = Vec::new();
    for k in 0..num_chunks {
        let start = k * chunk_n;
        let avail = (t - start).min(chunk_n);
        let mut padded = x.slice(start, avail)?;
        if avail < chunk_n {
            let mut chans = Vec::with_capacity(c);
            for ch in 0..c {
                let mut buf = padded.channel(ch).to_vec();
                buf.resize(chunk_n, 0.0);
                chans.push(buf);
            }
            padded = Waveform::from_channels(chans, x.sample_rate())?;
        }
        let part = forward_waveform(model, &padded)?;
        if k == 0 {
            names = part.names().iter().map(|n| n.to_string()).collect();
            stems = vec![vec![Vec::with_capacity(t); c]; names.len()];
        }
        for (s, name) in names.iter().enumerate() {
            let w = part.get(name).unwrap();
            for ch in 0..c {
                stems[s][ch].extend_from_slice(&w.channel(ch)[..avail]);
            }
        }
    }
    let mut out = SourceSet::new();
    for (s, name) in names.iter().enumerate() {
        out.push(name, Waveform::from_channels(stems[s].clone(), x.sample_rate())?)?;
    }
    Ok(out)
}

/// The model's standard full-track path: U-net whole-track, masking network
/// chunked at the default length.
pub fn separate_plain(model: &AnyModel, x: &Waveform) -> Result<SourceSet> {
    match model {
        AnyModel::Demucs(_) => forward_waveform(model, x),
        AnyModel::ConvTasnet(_) => separate_chunked(model, x, DEFAULT_CHUNK_SECONDS),
    }
}

/// Uniform integer shifts in [0, max_shift_samples]; an empty budget means
/// every shift is 0.
pub fn draw_shifts(num_shifts: usize, max_shift_samples: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_shifts)
        .map(|_| {
            if max_shift_samples == 0 {
                0
            } else {
                rng.gen_range(0..max_shift_samples)
            }
        })
        .collect()
}

/// Runs `separate` on copies of `x` front-padded by each shift, drops each
/// pad from the output, and averages in fixed order. Also returns the
/// aligned per-shift outputs (the average lies in their convex hull).
pub fn shift_average<F>(
    separate: F,
    x: &Waveform,
    shifts: &[usize],
) -> Result<(SourceSet, Vec<SourceSet>)>
where
    F: Fn(&Waveform) -> Result<SourceSet>,
{
    if shifts.is_empty() {
        return Err(Error::arg("need at least one shift"));
    }
    let t = x.len();
    let c = x.channels();
    let mut aligned: Vec<SourceSet> = Vec::with_capacity(shifts.len());
    for &d in shifts {
        let padded = if d == 0 {
            x.clone()
        } else {
            let mut chans = Vec::with_capacity(c);
            for ch in 0..c {
                let mut buf = vec![0.0; d];
                buf.extend_from_slice(x.channel(ch));
                chans.push(buf);
            }
            Waveform::from_channels(chans, x.sample_rate())?
        };
        let out = separate(&padded)?;
        // Undo the shift: drop the first d samples of every stem.
        let mut undone = SourceSet::new();
        for (name, w) in out.stems() {
            undone.push(name, w.slice(d, t)?)?;
        }
        aligned.push(undone);
    }

    let names: Vec<String> = aligned[0].names().iter().map(|n| n.to_string()).collect();
    let inv = 1.0 / shifts.len() as f64;
    let mut avg = SourceSet::new();
    for name in &names {
        let mut chans = vec![vec![0.0f64; t]; c];
        for part in &aligned {
            let w = part
                .get(name)
                .ok_or_else(|| Error::arg("per-shift outputs disagree on stem names"))?;
            for ch in 0..c {
                for (o, v) in chans[ch].iter_mut().zip(w.channel(ch)) {
                    *o += v * inv;
                }
            }
        }
        avg.push(name, Waveform::from_channels(chans, x.sample_rate())?)?;
    }
    Ok((avg, aligned))
}

/// Randomized equivariant stabilization over the model's standard path.
pub fn shift_stabilize(
    model: &AnyModel,
    x: &Waveform,
    num_shifts: usize,
    max_shift_seconds: f64,
    seed: u64,
) -> Result<SourceSet> {
    if num_shifts == 0 {
        return Err(Error::arg("need at least one shift"));
    }
    if !(max_shift_seconds >= 0.0) {
        return Err(Error::arg("max shift must be non-negative"));
    }
    let max_shift = (max_shift_seconds * x.sample_rate() as f64).round() as usize;
    let shifts = draw_shifts(num_shifts, max_shift, seed);
    let (avg, _) = shift_average(|w| separate_plain(model, w), x, &shifts)?;
    Ok(avg)
}
