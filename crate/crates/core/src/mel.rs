//! Mel-spectrogram diagnostics: HTK mel scale, triangular area-unnormalized
//! filters over [0, sr/2], log(1+m) compression. Power is averaged over
//! channels so mono and stereo tracks produce comparable plots.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::stft::stft;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter weights, shape `(n_mels, bins)` row-major with
/// `bins = window_length/2 + 1`. Peaks sit at mel-uniform points between
/// 0 Hz and sr/2; triangles are linear in Hz and peak at 1.
pub fn mel_filterbank(n_mels: usize, window_length: usize, sample_rate: u32) -> Vec<f64> {
    let bins = window_length / 2 + 1;
    let mel_hi = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = vec![0.0; n_mels * bins];
    for i in 0..n_mels {
        let (lo, center, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        for f in 0..bins {
            let hz = f as f64 * sample_rate as f64 / window_length as f64;
            let w = if hz <= center {
                (hz - lo) / (center - lo)
            } else {
                (hi - hz) / (hi - center)
            };
            bank[i * bins + f] = w.max(0.0);
        }
    }
    bank
}

/// Log-compressed mel power spectrogram, shape `(n_mels, frames)`.
pub fn mel_spectrogram(
    wave: &Waveform,
    n_mels: usize,
    window_length: usize,
    hop: usize,
) -> Result<Grid> {
    if n_mels == 0 {
        return Err(Error::arg("n_mels must be at least 1"));
    }
    let bins = window_length / 2 + 1;
    if n_mels > bins {
        return Err(Error::arg(format!(
            "n_mels {n_mels} exceeds the {bins} frequency bins of a {window_length}-sample window"
        )));
    }
    let spec = stft(wave, window_length, hop)?;
    let power = spec.mean_power(); // [bin][frame]
    let frames = spec.frames();
    let bank = mel_filterbank(n_mels, window_length, wave.sample_rate());

    let mut out = Grid::zeros(n_mels, frames);
    for i in 0..n_mels {
        for m in 0..frames {
            let mut acc = 0.0;
            for f in 0..bins {
                acc += bank[i * bins + f] * power[f * frames + m];
            }
            *out.at_mut(i, m) = acc.ln_1p();
        }
    }
    Ok(out)
}
