//! Oracle mask separators: upper bounds computed from the reference stems
//! themselves. The ratio mask weights each time-frequency bin of the mixture
//! by the relative power of the target stem; the binary mask assigns each
//! bin entirely to the loudest stem. Both reuse the mixture's phase, so they
//! bound what any magnitude-mask method can reach at the given resolution.

use crate::audio::{SourceSet, Waveform};
use crate::error::{Error, Result};
use crate::stft::{istft, stft, ComplexSpectrogram};

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
/// Power-law exponent applied to stem magnitudes before normalizing.
pub const RATIO_EXPONENT: f64 = 2.0;

fn aligned_stems<'a>(references: &'a SourceSet) -> Result<Vec<(&'a str, &'a Waveform)>> {
    let names = references.names();
    if names.is_empty() {
        return Err(Error::arg("no reference stems"));
    }
    let stems: Vec<(&str, &Waveform)> = names
        .iter()
        .map(|n| (*n, references.get(n).unwrap()))
        .collect();
    let (len, ch, sr) = {
        let w = stems[0].1;
        (w.len(), w.channels(), w.sample_rate())
    };
    for (name, w) in &stems {
        if w.len() != len || w.channels() != ch || w.sample_rate() != sr {
            return Err(Error::shape(format!("stem '{name}' is misaligned")));
        }
    }
    Ok(stems)
}

fn masked_istft(
    mix_spec: &ComplexSpectrogram,
    masks: &[Vec<f64>],
    names: &[&str],
    hop: usize,
    target_len: usize,
) -> Result<SourceSet> {
    let (ch, bins, frames) = (mix_spec.channels(), mix_spec.bins(), mix_spec.frames());
    let mut out = SourceSet::new();
    for (s, name) in names.iter().enumerate() {
        let mut spec = ComplexSpectrogram::zeros(
            ch,
            bins,
            frames,
            mix_spec.window_length(),
            hop,
            mix_spec.sample_rate(),
        );
        for c in 0..ch {
            for f in 0..bins {
                for m in 0..frames {
                    let w = masks[s][(c * bins + f) * frames + m];
                    *spec.at_mut(c, f, m) = mix_spec.at(c, f, m) * w;
                }
            }
        }
        out.push(name, istft(&spec, hop, target_len)?)?;
    }
    Ok(out)
}

/// Ratio-mask oracle: mask_s = |S_s|^e / Σ_k |S_k|^e per channel and bin;
/// bins where every stem is zero get the uniform share 1/S. Masks sum to
/// one everywhere, so the estimates sum to the mixture reconstruction.
pub fn ideal_ratio_mask(
    mixture: &Waveform,
    references: &SourceSet,
    window: usize,
    hop: usize,
) -> Result<SourceSet> {
    let stems = aligned_stems(references)?;
    check_mixture_geometry(mixture, stems[0].1)?;
    let mix_spec = stft(mixture, window, hop)?;
    let stem_specs: Vec<ComplexSpectrogram> = stems
        .iter()
        .map(|(_, w)| stft(w, window, hop))
        .collect::<Result<_>>()?;

    let s_count = stems.len();
    let (ch, bins, frames) = (mix_spec.channels(), mix_spec.bins(), mix_spec.frames());
    let cell = ch * bins * frames;
    let mut masks = vec![vec![0.0f64; cell]; s_count];
    for c in 0..ch {
        for f in 0..bins {
            for m in 0..frames {
                let i = (c * bins + f) * frames + m;
                let powers: Vec<f64> = stem_specs
                    .iter()
                    .map(|sp| sp.at(c, f, m).norm().powf(RATIO_EXPONENT))
                    .collect();
                let total: f64 = powers.iter().sum();
                if total > 0.0 {
                    for (s, p) in powers.iter().enumerate() {
                        masks[s][i] = p / total;
                    }
                } else {
                    for mask in masks.iter_mut() {
                        mask[i] = 1.0 / s_count as f64;
                    }
                }
            }
        }
    }
    let names: Vec<&str> = stems.iter().map(|(n, _)| *n).collect();
    masked_istft(&mix_spec, &masks, &names, hop, mixture.len())
}

/// Binary-mask oracle: each bin goes whole to the stem with the largest
/// magnitude (earliest stem wins ties), so the masks one-hot partition
/// every bin.
pub fn ideal_binary_mask(
    mixture: &Waveform,
    references: &SourceSet,
    window: usize,
    hop: usize,
) -> Result<SourceSet> {
    let stems = aligned_stems(references)?;
    check_mixture_geometry(mixture, stems[0].1)?;
    let mix_spec = stft(mixture, window, hop)?;
    let stem_specs: Vec<ComplexSpectrogram> = stems
        .iter()
        .map(|(_, w)| stft(w, window, hop))
        .collect::<Result<_>>()?;

    let s_count = stems.len();
    let (ch, bins, frames) = (mix_spec.channels(), mix_spec.bins(), mix_spec.frames());
    let cell = ch * bins * frames;
    let mut masks = vec![vec![0.0f64; cell]; s_count];
    for c in 0..ch {
        for f in 0..bins {
            for m in 0..frames {
                let i = (c * bins + f) * frames + m;
                let mut best = 0usize;
                let mut best_mag = stem_specs[0].at(c, f, m).norm();
                for (s, sp) in stem_specs.iter().enumerate().skip(1) {
                    let mag = sp.at(c, f, m).norm();
                    if mag > best_mag {
                        best = s;
                        best_mag = mag;
                    }
                }
                masks[best][i] = 1.0;
            }
        }
    }
    let names: Vec<&str> = stems.iter().map(|(n, _)| *n).collect();
    masked_istft(&mix_spec, &masks, &names, hop, mixture.len())
}

fn check_mixture_geometry(mixture: &Waveform, stem: &Waveform) -> Result<()> {
    if mixture.len() != stem.len()
        || mixture.channels() != stem.channels()
        || mixture.sample_rate() != stem.sample_rate()
    {
        return Err(Error::shape("mixture does not match the stems"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{decompose, sdr};

    /// Two stems in disjoint frequency bands, well separated.
    fn banded_pair(sr: u32, len: usize) -> (Waveform, SourceSet) {
        let lo: Vec<f64> = (0..len)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 100.0 * i as f64 / sr as f64).sin())
            .collect();
        let hi: Vec<f64> = (0..len)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 3000.0 * i as f64 / sr as f64).sin())
            .collect();
        let mix: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + b).collect();
        let mut refs = SourceSet::new();
        refs.push("low", Waveform::new(lo, 1, sr).unwrap()).unwrap();
        refs.push("high", Waveform::new(hi, 1, sr).unwrap()).unwrap();
        (Waveform::new(mix, 1, sr).unwrap(), refs)
    }

    fn stem_sdr(est: &Waveform, refs: &SourceSet, j: usize) -> f64 {
        let names = refs.names();
        let ref_v: Vec<Vec<f64>> = names
            .iter()
            .map(|n| refs.get(n).unwrap().channel(0).to_vec())
            .collect();
        let slices: Vec<&[f64]> = ref_v.iter().map(|v| v.as_slice()).collect();
        let d = decompose(est.channel(0), &slices, j).unwrap();
        sdr(&d)
    }

    #[test]
    fn ratio_mask_separates_disjoint_bands() {
        let (mix, refs) = banded_pair(8000, 8000);
        let est = ideal_ratio_mask(&mix, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        for (j, name) in refs.names().iter().enumerate() {
            let s = stem_sdr(est.get(name).unwrap(), &refs, j);
            assert!(s >= 40.0, "{name}: {s} dB");
        }
    }

    #[test]
    fn binary_mask_matches_ratio_mask_on_disjoint_bands() {
        let (mix, refs) = banded_pair(8000, 8000);
        let irm = ideal_ratio_mask(&mix, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let ibm = ideal_binary_mask(&mix, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        for name in refs.names() {
            let a = irm.get(name).unwrap().channel(0);
            let b = ibm.get(name).unwrap().channel(0);
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let worst = a
                .iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            // Same reconstruction up to cross-band window leakage.
            assert!(worst / scale <= 0.05, "{name}: {}", worst / scale);
        }
    }

    #[test]
    fn single_stem_ratio_mask_reconstructs_the_mixture() {
        let (mix, _) = banded_pair(8000, 4000);
        let mut refs = SourceSet::new();
        refs.push("only", mix.clone()).unwrap();
        let est = ideal_ratio_mask(&mix, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let rec = est.get("only").unwrap();
        assert_eq!(rec.len(), mix.len());
        for (a, b) in rec.channel(0).iter().zip(mix.channel(0)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn ratio_masks_sum_to_the_mixture_reconstruction() {
        let (mix, refs) = banded_pair(8000, 4000);
        let est = ideal_ratio_mask(&mix, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        // Σ_s est_s == istft(stft(mix)) == mix (within roundtrip error).
        let names = est.names();
        let mut sum = vec![0.0f64; mix.len()];
        for n in &names {
            for (o, v) in sum.iter_mut().zip(est.get(n).unwrap().channel(0)) {
                *o += v;
            }
        }
        for (a, b) in sum.iter().zip(mix.channel(0)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn binary_masks_partition_every_bin() {
        // Construct stems with an exact magnitude tie everywhere: identical
        // stems. Ties go to the earliest stem, so stem 0 gets the whole
        // mixture and stem 1 gets silence.
        let sr = 8000;
        let len = 4000;
        let tone: Vec<f64> = (0..len)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / sr as f64).sin())
            .collect();
        let w = Waveform::new(tone.clone(), 1, sr).unwrap();
        let mix: Vec<f64> = tone.iter().map(|v| 2.0 * v).collect();
        let mixture = Waveform::new(mix, 1, sr).unwrap();
        let mut refs = SourceSet::new();
        refs.push("first", w.clone()).unwrap();
        refs.push("second", w).unwrap();
        let est = ideal_binary_mask(&mixture, &refs, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let first = est.get("first").unwrap().channel(0);
        let second = est.get("second").unwrap().channel(0);
        for (a, b) in first.iter().zip(mixture.channel(0)) {
            assert!((a - b).abs() <= 1e-6);
        }
        for v in second {
            assert!(v.abs() <= 1e-9);
        }
    }

    #[test]
    fn misaligned_mixture_is_rejected() {
        let (_, refs) = banded_pair(8000, 4000);
        let short = Waveform::zeros(1, 2000, 8000).unwrap();
        assert!(ideal_ratio_mask(&short, &refs, DEFAULT_WINDOW, DEFAULT_HOP).is_err());
        assert!(ideal_binary_mask(&short, &refs, DEFAULT_WINDOW, DEFAULT_HOP).is_err());
    }
}
