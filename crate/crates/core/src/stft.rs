//! Short-time Fourier analysis/synthesis with a periodic Hann window and
//! centered frames (input reflection-padded by half a window at both ends).
//! Synthesis normalizes by the actual per-sample sum of squared window
//! values, so reconstruction is exact (to rounding) wherever that sum is
//! positive — hop = window/4 is the default geometry.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Complex STFT values, laid out `[channel][bin][frame]` with
/// `bins = window_length/2 + 1` and `frames = floor(T / hop) + 1`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    data: Vec<Complex<f64>>,
    channels: usize,
    bins: usize,
    frames: usize,
    window_length: usize,
    hop: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(
        channels: usize,
        bins: usize,
        frames: usize,
        window_length: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Self {
        ComplexSpectrogram {
            data: vec![Complex::new(0.0, 0.0); channels * bins * frames],
            channels,
            bins,
            frames,
            window_length,
            hop,
            sample_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn window_length(&self) -> usize {
        self.window_length
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    fn idx(&self, c: usize, f: usize, m: usize) -> usize {
        (c * self.bins + f) * self.frames + m
    }

    #[inline]
    pub fn at(&self, c: usize, f: usize, m: usize) -> Complex<f64> {
        self.data[self.idx(c, f, m)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, f: usize, m: usize) -> &mut Complex<f64> {
        let i = self.idx(c, f, m);
        &mut self.data[i]
    }

    pub fn values(&self) -> &[Complex<f64>] {
        &self.data
    }

    /// Power averaged over channels, shape `[bin][frame]` flattened.
    pub fn mean_power(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins * self.frames];
        for c in 0..self.channels {
            for f in 0..self.bins {
                for m in 0..self.frames {
                    out[f * self.frames + m] += self.at(c, f, m).norm_sqr();
                }
            }
        }
        let inv = 1.0 / self.channels as f64;
        for v in &mut out {
            *v *= inv;
        }
        out
    }
}

/// Periodic Hann window: w[n] = 0.5 (1 - cos(2πn/N)), n = 0..N.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Reflected sample index for position `i` (possibly negative) in a signal of
/// length `len`; the edge samples are not repeated.
fn mirror(i: i64, len: usize) -> usize {
    let len = len as i64;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut m = i.rem_euclid(period);
    if m >= len {
        m = period - m;
    }
    m as usize
}

fn check_geometry(window_length: usize, hop: usize) -> Result<()> {
    if window_length == 0 {
        return Err(Error::arg("window length must be positive"));
    }
    if hop == 0 {
        return Err(Error::arg("hop must be positive"));
    }
    if hop > window_length {
        return Err(Error::arg(format!(
            "hop {hop} exceeds window length {window_length}"
        )));
    }
    Ok(())
}

pub fn stft(wave: &Waveform, window_length: usize, hop: usize) -> Result<ComplexSpectrogram> {
    check_geometry(window_length, hop)?;
    if wave.is_empty() {
        return Err(Error::arg("cannot take the STFT of an empty waveform"));
    }
    let t = wave.len();
    let bins = window_length / 2 + 1;
    let frames = t / hop + 1;
    let pad = window_length / 2;
    let window = hann_window(window_length);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_length);

    let mut spec = ComplexSpectrogram::zeros(
        wave.channels(),
        bins,
        frames,
        window_length,
        hop,
        wave.sample_rate(),
    );
    let mut buf = vec![Complex::new(0.0, 0.0); window_length];
    for c in 0..wave.channels() {
        let x = wave.channel(c);
        for m in 0..frames {
            let start = m as i64 * hop as i64 - pad as i64;
            for (n, b) in buf.iter_mut().enumerate() {
                let s = x[mirror(start + n as i64, t)];
                *b = Complex::new(s * window[n], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                *spec.at_mut(c, f, m) = buf[f];
            }
        }
    }
    Ok(spec)
}

pub fn istft(spec: &ComplexSpectrogram, hop: usize, target_length: usize) -> Result<Waveform> {
    check_geometry(spec.window_length(), hop)?;
    if hop != spec.hop() {
        return Err(Error::arg(format!(
            "hop {hop} does not match the spectrogram's analysis hop {}",
            spec.hop()
        )));
    }
    let win = spec.window_length();
    if spec.bins() != win / 2 + 1 {
        return Err(Error::shape(format!(
            "{} bins inconsistent with window length {win}",
            spec.bins()
        )));
    }
    let window = hann_window(win);
    let frames = spec.frames();
    let pad = win / 2;
    let ola_len = (frames - 1) * hop + win;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(win);

    let mut wsum = vec![0.0f64; ola_len];
    for m in 0..frames {
        for (n, w) in window.iter().enumerate() {
            wsum[m * hop + n] += w * w;
        }
    }

    let mut channels = Vec::with_capacity(spec.channels());
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for c in 0..spec.channels() {
        let mut acc = vec![0.0f64; ola_len];
        for m in 0..frames {
            buf[..spec.bins()].iter_mut().enumerate().for_each(|(f, b)| {
                *b = spec.at(c, f, m);
            });
            // Rebuild the conjugate-symmetric upper half.
            for f in spec.bins()..win {
                buf[f] = spec.at(c, win - f, m).conj();
            }
            ifft.process(&mut buf);
            let scale = 1.0 / win as f64;
            for (n, w) in window.iter().enumerate() {
                acc[m * hop + n] += buf[n].re * scale * w;
            }
        }
        let mut out = vec![0.0f64; target_length];
        for (i, o) in out.iter_mut().enumerate() {
            let j = i + pad;
            if j < ola_len && wsum[j] > 1e-12 {
                *o = acc[j] / wsum[j];
            }
        }
        channels.push(out);
    }
    Waveform::from_channels(channels, spec.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, sr: u32, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..channels * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Waveform::new(data, channels, sr).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let w = Waveform::zeros(1, 500, 8000).unwrap();
        let s = stft(&w, 128, 32).unwrap();
        assert!(s.values().iter().all(|v| v.norm() == 0.0));
        assert_eq!(s.bins(), 65);
        assert_eq!(s.frames(), 500 / 32 + 1);
    }

    #[test]
    fn bin_center_sinusoid_concentrates() {
        let win = 256;
        let sr = 8000u32;
        let k = 8;
        let freq = k as f64 * sr as f64 / win as f64;
        let t = 2048;
        let data: Vec<f64> = (0..t)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).cos())
            .collect();
        let w = Waveform::new(data, 1, sr).unwrap();
        let s = stft(&w, win, 64).unwrap();
        // Interior frame, away from the padded edges.
        let m = s.frames() / 2;
        let energy: Vec<f64> = (0..s.bins()).map(|f| s.at(0, f, m).norm_sqr()).collect();
        let total: f64 = energy.iter().sum();
        let argmax = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, k);
        // The Hann main lobe spans bins k-1..=k+1; at an exact bin center
        // everything lands there.
        let lobe: f64 = energy[k - 1..=k + 1].iter().sum();
        assert!(lobe / total >= 0.95, "lobe fraction {}", lobe / total);
    }

    #[test]
    fn linearity() {
        let a = noise(2, 3000, 8000, 1);
        let b = noise(2, 3000, 8000, 2);
        let mut ab = a.clone();
        ab.add_assign(&b).unwrap();
        let sa = stft(&a, 512, 128).unwrap();
        let sb = stft(&b, 512, 128).unwrap();
        let sab = stft(&ab, 512, 128).unwrap();
        for (i, v) in sab.values().iter().enumerate() {
            let sum = sa.values()[i] + sb.values()[i];
            let denom = v.norm().max(1.0);
            assert!((v - sum).norm() / denom < 1e-6);
        }
    }

    #[test]
    fn roundtrip_white_noise_1024_256() {
        let w = noise(2, 10_000, 44100, 3);
        let s = stft(&w, 1024, 256).unwrap();
        let r = istft(&s, 256, w.len()).unwrap();
        assert!(r.max_abs_diff(&w).unwrap() <= 1e-6);
    }

    #[test]
    fn roundtrip_half_window_hop() {
        let w = noise(1, 5000, 8000, 4);
        let s = stft(&w, 512, 256).unwrap();
        let r = istft(&s, 256, w.len()).unwrap();
        assert!(r.max_abs_diff(&w).unwrap() <= 1e-6);
    }

    #[test]
    fn roundtrip_odd_length_and_short_signal() {
        let w = noise(1, 777, 8000, 5);
        let s = stft(&w, 256, 64).unwrap();
        let r = istft(&s, 64, w.len()).unwrap();
        assert!(r.max_abs_diff(&w).unwrap() <= 1e-6);

        // Shorter than a window: reflection padding cycles.
        let w = noise(1, 100, 8000, 6);
        let s = stft(&w, 256, 64).unwrap();
        let r = istft(&s, 64, w.len()).unwrap();
        assert!(r.max_abs_diff(&w).unwrap() <= 1e-6);
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let s = ComplexSpectrogram::zeros(1, 129, 10, 256, 64, 8000);
        let w = istft(&s, 64, 500).unwrap();
        assert_eq!(w.len(), 500);
        assert!(w.peak() == 0.0);
    }

    #[test]
    fn istft_pads_or_trims_to_target() {
        let w = noise(1, 1000, 8000, 7);
        let s = stft(&w, 256, 64).unwrap();
        assert_eq!(istft(&s, 64, 600).unwrap().len(), 600);
        assert_eq!(istft(&s, 64, 1500).unwrap().len(), 1500);
    }

    #[test]
    fn geometry_errors() {
        let w = noise(1, 1000, 8000, 8);
        assert!(stft(&w, 0, 64).is_err());
        assert!(stft(&w, 256, 0).is_err());
        assert!(stft(&w, 128, 256).is_err());
        let s = stft(&w, 256, 64).unwrap();
        assert!(istft(&s, 32, 1000).is_err()); // hop mismatch
    }
}
