//! Minimal RIFF/WAVE reader and writer: 16-bit integer PCM and 32-bit IEEE
//! float, mono or stereo, little-endian. Unknown chunks are skipped on read.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const FMT_PCM: u16 = 1;
const FMT_IEEE_FLOAT: u16 = 3;

/// Integer samples decode as i/32768 so that -32768 maps to exactly -1.0.
const PCM_SCALE: f64 = 32768.0;

pub fn save_wav(wave: &Waveform, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let channels = wave.channels() as u16;
    let frames = wave.len();
    let (format_tag, bits) = match encoding {
        WavEncoding::Pcm16 => (FMT_PCM, 16u16),
        WavEncoding::Float32 => (FMT_IEEE_FLOAT, 32u16),
    };
    let block_align = channels * (bits / 8);
    let byte_rate = wave.sample_rate() * block_align as u32;
    let data_len = frames as u32 * block_align as u32;

    // fmt(24) + fact(12, float only) + data header(8) + payload
    let fact_len: u32 = if format_tag == FMT_IEEE_FLOAT { 12 } else { 0 };
    let riff_len = 4 + 24 + fact_len + 8 + data_len;

    let mut out = Vec::with_capacity(riff_len as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if format_tag == FMT_IEEE_FLOAT {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(frames as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());

    for t in 0..frames {
        for c in 0..wave.channels() {
            let v = wave.channel(c)[t];
            match encoding {
                WavEncoding::Pcm16 => {
                    let scaled = (v.clamp(-1.0, 1.0) * PCM_SCALE).round();
                    let i = scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    out.extend_from_slice(&i.to_le_bytes());
                }
                WavEncoding::Float32 => {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let bytes = fs::read(&path)?;
    let name = path.as_ref().display().to_string();
    parse_wav(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::format(format!("{name}: {msg}")),
        other => other,
    })
}

fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("chunk size overruns file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::format("fmt chunk too short"));
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {} // fact, LIST, cue, ... — irrelevant here
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::format("missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format("missing data chunk"))?;
    if channels == 0 {
        return Err(Error::format("zero channels"));
    }
    let channels = channels as usize;
    if channels > 2 {
        return Err(Error::format(format!(
            "unsupported channel count {channels} (mono or stereo only)"
        )));
    }

    let bytes_per_sample = match (tag, bits) {
        (FMT_PCM, 16) => 2,
        (FMT_IEEE_FLOAT, 32) => 4,
        _ => {
            return Err(Error::format(format!(
                "unsupported encoding: format tag {tag}, {bits} bits (want PCM16 or float32)"
            )))
        }
    };
    let block = channels * bytes_per_sample;
    if data.len() % block != 0 {
        return Err(Error::format("data chunk not a whole number of frames"));
    }
    let frames = data.len() / block;

    let mut planar = vec![0.0f64; channels * frames];
    for t in 0..frames {
        for c in 0..channels {
            let off = (t * channels + c) * bytes_per_sample;
            let v = match bytes_per_sample {
                2 => {
                    let i = i16::from_le_bytes(data[off..off + 2].try_into().unwrap());
                    i as f64 / PCM_SCALE
                }
                _ => {
                    let f = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
                    f as f64
                }
            };
            planar[c * frames + t] = v;
        }
    }
    Waveform::new(planar, channels, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Keep the dir alive by leaking it; test files are tiny.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn pcm16_half_scale_value() {
        // A stored int of 16384 must decode to 0.5 exactly.
        let path = tmp("half.wav");
        let w = Waveform::new(vec![0.5], 1, 8000).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.channel(0), &[0.5]);
    }

    #[test]
    fn pcm16_clamps_out_of_range() {
        let path = tmp("clamp.wav");
        let w = Waveform::new(vec![1.5, -2.0, -1.0], 1, 8000).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.channel(0)[0], 1.0 - 1.0 / 32768.0);
        assert_eq!(r.channel(0)[1], -1.0);
        assert_eq!(r.channel(0)[2], -1.0); // -1.0 round-trips exactly
    }

    #[test]
    fn pcm16_roundtrip_error_bound() {
        let path = tmp("bound.wav");
        let vals: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 0.99).collect();
        let w = Waveform::new(vals.clone(), 1, 44100).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        let r = load_wav(&path).unwrap();
        for (a, b) in vals.iter().zip(r.channel(0)) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float32_roundtrip_bit_identical() {
        let path = tmp("f32.wav");
        // Values chosen to be exactly representable in f32.
        let vals: Vec<f64> = (0..257).map(|i| (i as f32 * 0.125f32 - 16.0) as f64).collect();
        let w = Waveform::new(vals.clone(), 1, 44100).unwrap();
        save_wav(&w, &path, WavEncoding::Float32).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.channel(0), &vals[..]);
    }

    #[test]
    fn empty_waveform_roundtrip() {
        let path = tmp("empty.wav");
        let w = Waveform::zeros(2, 0, 8000).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.len(), 0);
        assert_eq!(r.channels(), 2);
        assert_eq!(r.sample_rate(), 8000);
    }

    #[test]
    fn stereo_shape_preserved() {
        let path = tmp("st.wav");
        let w = Waveform::from_channels(vec![vec![0.1; 441], vec![-0.1; 441]], 44100).unwrap();
        save_wav(&w, &path, WavEncoding::Float32).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.channels(), 2);
        assert_eq!(r.len(), 441);
        assert_eq!(r.sample_rate(), 44100);
    }

    #[test]
    fn skips_unknown_chunks() {
        let path = tmp("list.wav");
        let w = Waveform::new(vec![0.25, -0.25], 1, 8000).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        // Splice a LIST chunk between fmt and data.
        let bytes = std::fs::read(&path).unwrap();
        let mut patched = Vec::new();
        patched.extend_from_slice(&bytes[..12]); // RIFF header
        patched.extend_from_slice(&bytes[12..36]); // fmt chunk
        patched.extend_from_slice(b"LIST");
        patched.extend_from_slice(&5u32.to_le_bytes());
        patched.extend_from_slice(b"INFOx");
        patched.push(0); // pad byte for odd size
        patched.extend_from_slice(&bytes[36..]);
        let riff_len = (patched.len() - 8) as u32;
        patched[4..8].copy_from_slice(&riff_len.to_le_bytes());
        std::fs::write(&path, &patched).unwrap();
        let r = load_wav(&path).unwrap();
        assert_eq!(r.channel(0), &[0.25, -0.25]);
    }

    #[test]
    fn rejects_corrupt_and_unsupported() {
        let path = tmp("bad.wav");
        std::fs::write(&path, b"JUNKJUNKJUNKJUNK").unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Format(_))));

        // 8-bit PCM is unsupported.
        let w = Waveform::new(vec![0.0], 1, 8000).unwrap();
        save_wav(&w, &path, WavEncoding::Pcm16).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[34] = 8; // bits-per-sample field
        std::fs::write(&path, &bytes).unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported encoding"));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_wav("/nonexistent/nowhere.wav"),
            Err(Error::Io(_))
        ));
    }
}
