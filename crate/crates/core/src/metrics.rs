//! Projection-based separation quality metrics. Every estimate is split into
//! a target part (projection on its own reference), an interference part
//! (what the other references explain), and an artifact remainder; SDR, SIR
//! and SAR are energy ratios between those parts. Evaluation runs on 1-second
//! non-overlapping frames, takes the per-track median over frames, and the
//! global median over tracks — nothing is averaged.
//!
//! This is the plain three-term decomposition with exact projections; no
//! allowed-distortion filtering is applied, so absolute dB values are
//! comparable only to other plain-projection implementations.

use std::fmt::Write as _;
use std::path::Path;

use crate::audio::SourceSet;
use crate::error::{Error, Result};

/// dB clamp applied to every ratio.
pub const DB_CLAMP: f64 = 100.0;
/// Mean-square threshold under which a reference frame counts as silent
/// (1e-8 of a full-scale unit-amplitude signal's energy).
pub const SILENT_THRESHOLD: f64 = 1e-8;
const RATIO_EPS: f64 = 1e-30;

pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Projects `est` onto reference `j` and onto the span of all references.
/// The span projection solves the Gram system directly.
pub fn decompose(est: &[f64], refs: &[&[f64]], j: usize) -> Result<Decomposition> {
    let s = refs.len();
    if j >= s {
        return Err(Error::arg(format!("source index {j} out of {s}")));
    }
    let n = est.len();
    if refs.iter().any(|r| r.len() != n) {
        return Err(Error::shape("references and estimate must be equal length"));
    }
    let norm_j = energy(refs[j]);
    if norm_j <= 0.0 {
        return Err(Error::numeric("zero-norm reference"));
    }

    // Target: rank-one projection on s_j.
    let cj = dot(est, refs[j]) / norm_j;
    let s_target: Vec<f64> = refs[j].iter().map(|v| cj * v).collect();

    // Span projection: Gram matrix solve with partial pivoting.
    let mut gram = vec![vec![0.0f64; s]; s];
    let mut rhs = vec![0.0f64; s];
    for a in 0..s {
        for b in a..s {
            let v = dot(refs[a], refs[b]);
            gram[a][b] = v;
            gram[b][a] = v;
        }
        rhs[a] = dot(refs[a], est);
    }
    let scale = (0..s).map(|i| gram[i][i]).fold(0.0f64, f64::max);
    let coeffs = solve_spd(&mut gram, &mut rhs, scale)?;

    let mut p_span = vec![0.0f64; n];
    for (a, &c) in coeffs.iter().enumerate() {
        for (o, r) in p_span.iter_mut().zip(refs[a]) {
            *o += c * r;
        }
    }

    let e_interf: Vec<f64> = p_span
        .iter()
        .zip(&s_target)
        .map(|(p, t)| p - t)
        .collect();
    let e_artif: Vec<f64> = est.iter().zip(&p_span).map(|(e, p)| e - p).collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
    })
}

/// Gaussian elimination with partial pivoting; flags rank deficiency
/// relative to the largest diagonal energy.
fn solve_spd(m: &mut [Vec<f64>], rhs: &mut [f64], scale: f64) -> Result<Vec<f64>> {
    let s = rhs.len();
    let tol = scale.max(f64::MIN_POSITIVE) * 1e-12;
    for col in 0..s {
        let (pivot_row, pivot) = (col..s)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot <= tol {
            return Err(Error::numeric("rank-deficient reference set"));
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for r in col + 1..s {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..s {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0f64; s];
    for col in (0..s).rev() {
        let mut v = rhs[col];
        for c in col + 1..s {
            v -= m[col][c] * x[c];
        }
        x[col] = v / m[col][col];
    }
    Ok(x)
}

/// Reference least-squares projection by modified Gram–Schmidt — an
/// independent route used to validate the Gram-solve projection.
pub fn project_span_gram_schmidt(est: &[f64], refs: &[&[f64]]) -> Result<Vec<f64>> {
    let n = est.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in refs {
        let mut q: Vec<f64> = r.to_vec();
        for b in &basis {
            let c = dot(&q, b);
            for (qi, bi) in q.iter_mut().zip(b) {
                *qi -= c * bi;
            }
        }
        let norm = energy(&q).sqrt();
        if norm <= 1e-12 * energy(r).sqrt().max(1.0) {
            return Err(Error::numeric("rank-deficient reference set"));
        }
        for qi in q.iter_mut() {
            *qi /= norm;
        }
        basis.push(q);
    }
    let mut out = vec![0.0f64; n];
    for b in &basis {
        let c = dot(est, b);
        for (o, bi) in out.iter_mut().zip(b) {
            *o += c * bi;
        }
    }
    Ok(out)
}

fn db_clamped(num: f64, den: f64) -> f64 {
    let v = 10.0 * ((num + RATIO_EPS) / (den + RATIO_EPS)).log10();
    v.clamp(-DB_CLAMP, DB_CLAMP)
}

pub fn sdr(d: &Decomposition) -> f64 {
    let err: Vec<f64> = d
        .e_interf
        .iter()
        .zip(&d.e_artif)
        .map(|(a, b)| a + b)
        .collect();
    db_clamped(energy(&d.s_target), energy(&err))
}

pub fn sir(d: &Decomposition) -> f64 {
    db_clamped(energy(&d.s_target), energy(&d.e_interf))
}

pub fn sar(d: &Decomposition) -> f64 {
    let kept: Vec<f64> = d
        .s_target
        .iter()
        .zip(&d.e_interf)
        .map(|(a, b)| a + b)
        .collect();
    db_clamped(energy(&kept), energy(&d.e_artif))
}

/// Middle value (mean of the two middles for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone)]
pub struct FrameMetrics {
    pub frame_index: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Debug, Clone)]
pub struct SourceEval {
    pub source: String,
    pub frames: Vec<FrameMetrics>,
    /// Frames skipped as silent or rank-deficient.
    pub skipped_frames: usize,
}

impl SourceEval {
    pub fn evaluable(&self) -> bool {
        !self.frames.is_empty()
    }
    pub fn median_sdr(&self) -> Option<f64> {
        median(&self.frames.iter().map(|f| f.sdr).collect::<Vec<_>>())
    }
    pub fn median_sir(&self) -> Option<f64> {
        median(&self.frames.iter().map(|f| f.sir).collect::<Vec<_>>())
    }
    pub fn median_sar(&self) -> Option<f64> {
        median(&self.frames.iter().map(|f| f.sar).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone)]
pub struct TrackEval {
    pub track: String,
    pub sources: Vec<SourceEval>,
}

/// Framewise metrics for one track. Estimates and references must hold the
/// same source names on aligned audio; stereo channels are concatenated into
/// one vector per frame before projection.
pub fn evaluate_track(
    track: &str,
    estimates: &SourceSet,
    references: &SourceSet,
    frame_seconds: f64,
    hop_seconds: f64,
) -> Result<TrackEval> {
    if estimates.names() != references.names() {
        return Err(Error::arg("estimate and reference source names differ"));
    }
    let names: Vec<String> = references.names().iter().map(|n| n.to_string()).collect();
    if names.is_empty() {
        return Err(Error::arg("no sources to evaluate"));
    }
    let first = references.get(&names[0]).unwrap();
    let sr = first.sample_rate();
    let len = first.len();
    let channels = first.channels();
    for set in [references, estimates] {
        for name in &names {
            let w = set.get(name).unwrap();
            if w.len() != len || w.sample_rate() != sr || w.channels() != channels {
                return Err(Error::shape(format!("source '{name}' is misaligned")));
            }
        }
    }
    if !(frame_seconds > 0.0) || !(hop_seconds > 0.0) {
        return Err(Error::arg("frame and hop must be positive"));
    }
    let frame_n = (frame_seconds * sr as f64).round() as usize;
    let hop_n = (hop_seconds * sr as f64).round() as usize;
    if frame_n == 0 || hop_n == 0 {
        return Err(Error::arg("frame shorter than one sample"));
    }
    let num_frames = if len < frame_n {
        0
    } else {
        (len - frame_n) / hop_n + 1
    };

    // One flattened vector per source per frame: channels concatenated.
    let flatten = |w: &crate::audio::Waveform, start: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(frame_n * channels);
        for c in 0..channels {
            v.extend_from_slice(&w.channel(c)[start..start + frame_n]);
        }
        v
    };

    let is_silent = |frame: &[f64]| (energy(frame) / frame.len() as f64) < SILENT_THRESHOLD;

    let mut sources = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let mut frames = Vec::new();
        let mut skipped = 0usize;
        for f in 0..num_frames {
            let start = f * hop_n;
            let ref_frames: Vec<Vec<f64>> = names
                .iter()
                .map(|n| flatten(references.get(n).unwrap(), start))
                .collect();
            if is_silent(&ref_frames[j]) {
                skipped += 1;
                continue;
            }
            // Other references silent in this frame span nothing — drop
            // them so they cannot fake a rank deficiency.
            let mut kept: Vec<&[f64]> = Vec::with_capacity(names.len());
            let mut j_kept = 0;
            for (i, rf) in ref_frames.iter().enumerate() {
                if i == j {
                    j_kept = kept.len();
                    kept.push(rf);
                } else if !is_silent(rf) {
                    kept.push(rf);
                }
            }
            let est_frame = flatten(estimates.get(name).unwrap(), start);
            match decompose(&est_frame, &kept, j_kept) {
                Ok(d) => frames.push(FrameMetrics {
                    frame_index: f,
                    sdr: sdr(&d),
                    sir: sir(&d),
                    sar: sar(&d),
                }),
                // Degenerate reference geometry in this frame: skip it.
                Err(Error::Numeric(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        sources.push(SourceEval {
            source: name.clone(),
            frames,
            skipped_frames: skipped,
        });
    }
    Ok(TrackEval {
        track: track.to_string(),
        sources,
    })
}

#[derive(Debug, Default)]
pub struct EvalReport {
    pub tracks: Vec<TrackEval>,
    pub frame_seconds: f64,
    pub hop_seconds: f64,
}

impl EvalReport {
    pub fn new(frame_seconds: f64, hop_seconds: f64) -> Self {
        EvalReport {
            tracks: Vec::new(),
            frame_seconds,
            hop_seconds,
        }
    }

    /// Median over tracks of each track's median — per source.
    pub fn global_median(&self, source: &str, metric: Metric) -> Option<f64> {
        let mut per_track = Vec::new();
        for t in &self.tracks {
            for s in &t.sources {
                if s.source == source {
                    let m = match metric {
                        Metric::Sdr => s.median_sdr(),
                        Metric::Sir => s.median_sir(),
                        Metric::Sar => s.median_sar(),
                    };
                    if let Some(v) = m {
                        per_track.push(v);
                    }
                }
            }
        }
        median(&per_track)
    }

    pub fn source_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for t in &self.tracks {
            for s in &t.sources {
                if !names.contains(&s.source) {
                    names.push(s.source.clone());
                }
            }
        }
        names
    }

    /// One row per retained frame: track,source,frame_index,sdr,sir,sar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("track,source,frame_index,sdr,sir,sar\n");
        for t in &self.tracks {
            for s in &t.sources {
                for f in &s.frames {
                    writeln!(
                        out,
                        "{},{},{},{:.6},{:.6},{:.6}",
                        t.track, s.source, f.frame_index, f.sdr, f.sir, f.sar
                    )
                    .unwrap();
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Structured-text summary: global medians and per-track medians.
    pub fn summary(&self) -> String {
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"frame_seconds\": {},", self.frame_seconds);
        let _ = writeln!(s, "  \"hop_seconds\": {},", self.hop_seconds);
        let _ = writeln!(s, "  \"tracks\": {},", self.tracks.len());
        s.push_str("  \"global_median\": {\n");
        let names = self.source_names();
        for (i, name) in names.iter().enumerate() {
            let fmt = |m: Option<f64>| match m {
                Some(v) => format!("{v:.4}"),
                None => "null".to_string(),
            };
            let _ = write!(
                s,
                "    \"{name}\": {{\"sdr\": {}, \"sir\": {}, \"sar\": {}}}",
                fmt(self.global_median(name, Metric::Sdr)),
                fmt(self.global_median(name, Metric::Sir)),
                fmt(self.global_median(name, Metric::Sar)),
            );
            s.push_str(if i + 1 < names.len() { ",\n" } else { "\n" });
        }
        s.push_str("  },\n  \"per_track\": {\n");
        for (ti, t) in self.tracks.iter().enumerate() {
            let _ = write!(s, "    \"{}\": {{", t.track);
            for (si, src) in t.sources.iter().enumerate() {
                let fmt = |m: Option<f64>| match m {
                    Some(v) => format!("{v:.4}"),
                    None => "null".to_string(),
                };
                let _ = write!(
                    s,
                    "\"{}\": {}{}",
                    src.source,
                    fmt(src.median_sdr()),
                    if si + 1 < t.sources.len() { ", " } else { "" }
                );
            }
            s.push_str(if ti + 1 < self.tracks.len() { "},\n" } else { "}\n" });
        }
        s.push_str("  }\n}\n");
        s
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sdr,
    Sir,
    Sar,
}
