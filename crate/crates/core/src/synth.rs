//! Synthetic four-stem track generator. Each stem occupies a distinct
//! spectral region so that separation quality is measurable on material
//! generated in milliseconds: drums are sparse broadband noise bursts, bass
//! is a low tone sequence, other holds mid-band chords, vocals a vibrato
//! tone with band emphasis. The mixture is the exact stem sum, computed
//! after a shared peak normalization.

use std::f64::consts::PI;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::audio::{SourceSet, Waveform, SOURCE_NAMES};
use crate::error::{Error, Result};

/// Headroom target: the mixture peak never exceeds this.
pub const PEAK_TARGET: f64 = 0.9;

/// Deterministic per-seed track. `stereo` renders two decorrelated-but-
/// related channels per stem; mono renders one.
pub fn synth_track(seed: u64, duration_s: f64, sample_rate: u32, stereo: bool) -> Result<SourceSet> {
    if duration_s < 1.0 {
        return Err(Error::arg("synthetic tracks must be at least 1 s long"));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let channels = if stereo { 2 } else { 1 };
    let sr = sample_rate as f64;

    // Independent streams per stem so stems don't entangle.
    let mut stems: Vec<Vec<Vec<f64>>> = Vec::with_capacity(SOURCE_NAMES.len());
    for (s, _) in SOURCE_NAMES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s as u64 + 1)));
        let base = match s {
            0 => render_drums(&mut rng, n, sr),
            1 => render_bass(&mut rng, n, sr),
            2 => render_other(&mut rng, n, sr),
            _ => render_vocals(&mut rng, n, sr),
        };
        let mut chans = vec![base.clone()];
        if stereo {
            // Second channel: same material, slightly different gain and a
            // short seeded delay, so channels correlate without matching.
            let gain = 0.7 + 0.3 * rng.gen::<f64>();
            let delay = rng.gen_range(0..(sr as usize / 1000).max(1));
            let mut right = vec![0.0; n];
            for i in delay..n {
                right[i] = gain * base[i - delay];
            }
            chans.push(right);
        }
        stems.push(chans);
    }

    // Shared normalization keeps the mixture (the stem sum) under the peak
    // target while preserving exact additivity.
    let mut peak = 0.0f64;
    for c in 0..channels {
        for i in 0..n {
            let sum: f64 = stems.iter().map(|st| st[c][i]).sum();
            peak = peak.max(sum.abs());
        }
    }
    if peak > 0.0 {
        let scale = PEAK_TARGET / peak;
        for st in &mut stems {
            for ch in st.iter_mut() {
                for v in ch.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }

    let mut set = SourceSet::new();
    for (s, name) in SOURCE_NAMES.iter().enumerate() {
        set.push(name, Waveform::from_channels(stems[s].clone(), sample_rate)?)?;
    }
    let mixture = set.sum_stems()?;
    set.set_mixture(mixture)?;
    Ok(set)
}

/// Sparse decaying broadband bursts, a few per second.
fn render_drums(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let hits_per_sec = 2.5;
    let count = ((n as f64 / sr) * hits_per_sec).ceil() as usize;
    for _ in 0..count.max(1) {
        let start = rng.gen_range(0..n);
        let decay = sr * rng.gen_range(0.008..0.03);
        let amp = rng.gen_range(0.5..1.0);
        let burst_len = (decay * 6.0) as usize;
        for k in 0..burst_len {
            let i = start + k;
            if i >= n {
                break;
            }
            let env = (-(k as f64) / decay).exp();
            out[i] += amp * env * rng.gen_range(-1.0..1.0);
        }
    }
    out
}

/// Tone sequence constrained to 40–120 Hz, soft attack/release envelope.
fn render_bass(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let note_len = (sr * 0.5) as usize;
    let mut i = 0;
    while i < n {
        let freq = rng.gen_range(40.0..120.0);
        let amp = rng.gen_range(0.5..0.9);
        let phase0 = rng.gen_range(0.0..(2.0 * PI));
        let len = note_len.min(n - i);
        for k in 0..len {
            let t = k as f64 / sr;
            let env = envelope(k, len, (sr * 0.02) as usize);
            out[i + k] = amp * env * (2.0 * PI * freq * t + phase0).sin();
        }
        i += note_len;
    }
    out
}

/// Mid-band (300–1200 Hz) three-note chords.
fn render_other(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let note_len = (sr * 1.0) as usize;
    let mut i = 0;
    while i < n {
        let root = rng.gen_range(300.0..800.0);
        let ratios = [1.0, 1.25, 1.5];
        let amp = rng.gen_range(0.25..0.45);
        let len = note_len.min(n - i);
        let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..(2.0 * PI))).collect();
        for k in 0..len {
            let t = k as f64 / sr;
            let env = envelope(k, len, (sr * 0.05) as usize);
            let mut v = 0.0;
            for (r, p0) in ratios.iter().zip(&phases) {
                v += (2.0 * PI * root * r * t + p0).sin();
            }
            out[i + k] = amp * env * v / 3.0;
        }
        i += note_len;
    }
    out
}

/// Vibrato-modulated tone with a formant-like second partial.
fn render_vocals(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let phrase_len = (sr * 0.8) as usize;
    let mut i = 0;
    while i < n {
        let f0 = rng.gen_range(180.0..400.0);
        let vib_rate = rng.gen_range(4.5..6.5);
        let vib_depth = rng.gen_range(0.01..0.03);
        let amp = rng.gen_range(0.4..0.7);
        let len = phrase_len.min(n - i);
        let p0 = rng.gen_range(0.0..(2.0 * PI));
        let mut phase = p0;
        for k in 0..len {
            let t = k as f64 / sr;
            let env = envelope(k, len, (sr * 0.06) as usize);
            let freq = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * freq / sr;
            // Fundamental plus an emphasized band around 3× (formant-ish).
            out[i + k] = amp * env * (phase.sin() + 0.5 * (3.0 * phase).sin());
        }
        i += phrase_len;
    }
    out
}

/// Linear attack/release ramp, flat in between.
fn envelope(k: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.max(1).min(len / 2);
    if k < ramp {
        k as f64 / ramp as f64
    } else if k + ramp > len {
        (len - k) as f64 / ramp as f64
    } else {
        1.0
    }
}
