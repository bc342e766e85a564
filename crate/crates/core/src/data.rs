//! Dataset plumbing: the track manifest, track-directory I/O, the epoch
//! extract sampler and the remixing augmentations. One epoch visits every
//! (track, stride-offset) window exactly once in a seeded shuffle; a random
//! sub-window shift then trims each extract to the training crop length.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::audio::{SourceSet, Waveform, SOURCE_NAMES};
use crate::error::{Error, Result};
use crate::synth::synth_track;
use crate::wav::{load_wav, save_wav, WavEncoding};

/// Mixture-vs-stem-sum tolerance when ingesting external directories
/// (real datasets carry codec/quantization error).
pub const MIXTURE_WARN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split '{other}'"))),
        }
    }
}

/// Where a track's audio comes from: a generation seed or a stem directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackSource {
    Seed(u64),
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub id: String,
    pub split: Split,
    pub source: TrackSource,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub channels: usize,
}

impl TrackEntry {
    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Materializes the track's stems (synthesizing or reading from disk).
    pub fn load(&self) -> Result<SourceSet> {
        match &self.source {
            TrackSource::Seed(seed) => {
                synth_track(*seed, self.duration_s, self.sample_rate, self.channels == 2)
            }
            TrackSource::Dir(dir) => load_track_dir(dir),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<TrackEntry>,
}

impl DatasetManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Track ids must be globally unique, which keeps splits disjoint.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.id.is_empty() || e.id.contains(char::is_whitespace) {
                return Err(Error::arg(format!("invalid track id '{}'", e.id)));
            }
            if self.entries[..i].iter().any(|p| p.id == e.id) {
                return Err(Error::arg(format!("duplicate track id '{}'", e.id)));
            }
            if !(e.duration_s > 0.0) || e.sample_rate == 0 {
                return Err(Error::arg(format!("track '{}' has empty geometry", e.id)));
            }
            if e.channels != 1 && e.channels != 2 {
                return Err(Error::arg(format!(
                    "track '{}' must be mono or stereo",
                    e.id
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&TrackEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// One `track key=value…` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# source separation dataset manifest v1\n");
        for e in &self.entries {
            let src = match &e.source {
                TrackSource::Seed(v) => format!("seed={v}"),
                TrackSource::Dir(p) => format!("path={}", p.display()),
            };
            let _ = writeln!(
                s,
                "track id={} split={} {} duration={} sample_rate={} channels={}",
                e.id,
                e.split.as_str(),
                src,
                e.duration_s,
                e.sample_rate,
                e.channels
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap();
            if head != "track" {
                return Err(Error::format(format!(
                    "manifest line {}: expected 'track', got '{head}'",
                    ln + 1
                )));
            }
            let mut id = None;
            let mut split = None;
            let mut source = None;
            let mut duration = None;
            let mut sample_rate = None;
            let mut channels = None;
            for tok in tokens {
                let (key, value) = tok.split_once('=').ok_or_else(|| {
                    Error::format(format!("manifest line {}: bad token '{tok}'", ln + 1))
                })?;
                match key {
                    "id" => id = Some(value.to_string()),
                    "split" => split = Some(Split::parse(value)?),
                    "seed" => {
                        source = Some(TrackSource::Seed(value.parse().map_err(|_| {
                            Error::format(format!("manifest line {}: bad seed '{value}'", ln + 1))
                        })?))
                    }
                    "path" => source = Some(TrackSource::Dir(PathBuf::from(value))),
                    "duration" => {
                        duration = Some(value.parse().map_err(|_| {
                            Error::format(format!(
                                "manifest line {}: bad duration '{value}'",
                                ln + 1
                            ))
                        })?)
                    }
                    "sample_rate" => {
                        sample_rate = Some(value.parse().map_err(|_| {
                            Error::format(format!(
                                "manifest line {}: bad sample_rate '{value}'",
                                ln + 1
                            ))
                        })?)
                    }
                    "channels" => {
                        channels = Some(value.parse().map_err(|_| {
                            Error::format(format!(
                                "manifest line {}: bad channels '{value}'",
                                ln + 1
                            ))
                        })?)
                    }
                    other => {
                        return Err(Error::format(format!(
                            "manifest line {}: unknown key '{other}'",
                            ln + 1
                        )))
                    }
                }
            }
            let entry = TrackEntry {
                id: id.ok_or_else(|| Error::format(format!("manifest line {}: missing id", ln + 1)))?,
                split: split
                    .ok_or_else(|| Error::format(format!("manifest line {}: missing split", ln + 1)))?,
                source: source.ok_or_else(|| {
                    Error::format(format!("manifest line {}: missing seed or path", ln + 1))
                })?,
                duration_s: duration.ok_or_else(|| {
                    Error::format(format!("manifest line {}: missing duration", ln + 1))
                })?,
                sample_rate: sample_rate.ok_or_else(|| {
                    Error::format(format!("manifest line {}: missing sample_rate", ln + 1))
                })?,
                channels: channels.ok_or_else(|| {
                    Error::format(format!("manifest line {}: missing channels", ln + 1))
                })?,
            };
            entries.push(entry);
        }
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Relative `path=` entries resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}: {e}", path.display())))?;
        let mut m = Self::from_text(&text)?;
        if let Some(base) = path.parent() {
            for e in &mut m.entries {
                if let TrackSource::Dir(d) = &mut e.source {
                    if d.is_relative() {
                        *d = base.join(&d);
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Builds the desk-scale synthetic manifest: `train`/`valid`/`test` track
/// counts, all `duration_s` long, ids `tr_###`, seeds derived from `seed`.
pub fn synthetic_manifest(
    seed: u64,
    counts: (usize, usize, usize),
    duration_s: f64,
    sample_rate: u32,
    stereo: bool,
) -> DatasetManifest {
    let mut entries = Vec::new();
    let mut idx = 0usize;
    for (split, count) in [
        (Split::Train, counts.0),
        (Split::Valid, counts.1),
        (Split::Test, counts.2),
    ] {
        for _ in 0..count {
            entries.push(TrackEntry {
                id: format!("tr_{idx:03}"),
                split,
                source: TrackSource::Seed(seed.wrapping_add(idx as u64)),
                duration_s,
                sample_rate,
                channels: if stereo { 2 } else { 1 },
            });
            idx += 1;
        }
    }
    DatasetManifest { entries }
}

/// Reads `mixture.wav` plus the four canonical stems from a directory.
/// A mixture that deviates from the stem sum by more than
/// `MIXTURE_WARN_TOLERANCE` logs a warning but still loads.
pub fn load_track_dir(dir: &Path) -> Result<SourceSet> {
    let mut set = SourceSet::new();
    for name in SOURCE_NAMES {
        let path = dir.join(format!("{name}.wav"));
        if !path.exists() {
            return Err(Error::io(format!(
                "missing stem file '{name}.wav' in {}",
                dir.display()
            )));
        }
        set.push(name, load_wav(&path)?)?;
    }
    let mix_path = dir.join("mixture.wav");
    if !mix_path.exists() {
        return Err(Error::io(format!(
            "missing stem file 'mixture.wav' in {}",
            dir.display()
        )));
    }
    set.set_mixture(load_wav(&mix_path)?)?;
    if let Some(dev) = set.mixture_deviation()? {
        if dev > MIXTURE_WARN_TOLERANCE {
            log::warn!(
                "{}: mixture deviates from stem sum by {dev:.3e}",
                dir.display()
            );
        }
    }
    Ok(set)
}

/// Writes `mixture.wav` and the stems into `dir` (created if needed).
pub fn save_track_dir(set: &SourceSet, dir: &Path, encoding: WavEncoding) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, wave) in set.stems() {
        save_wav(wave, dir.join(format!("{name}.wav")), encoding)?;
    }
    save_wav(&set.mixture()?, dir.join("mixture.wav"), encoding)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub extract_seconds: f64,
    pub stride_seconds: f64,
    pub crop_seconds: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            extract_seconds: 11.0,
            stride_seconds: 1.0,
            crop_seconds: 10.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.extract_seconds > 0.0 && self.stride_seconds > 0.0 && self.crop_seconds > 0.0) {
            return Err(Error::arg("sampler lengths must be positive"));
        }
        if self.crop_seconds > self.extract_seconds {
            return Err(Error::arg("crop longer than extract"));
        }
        Ok(())
    }
}

/// One planned training example: a crop of `crop_samples` starting at
/// `offset_samples + shift_samples` within its track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedExtract {
    pub track_id: String,
    pub offset_samples: usize,
    pub shift_samples: usize,
    pub crop_samples: usize,
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Plans one epoch: every (track, stride-multiple offset) window whose
/// extract fits appears exactly once, order shuffled by (seed, epoch), and
/// each window gets a uniform shift within its extract-minus-crop slack.
/// Tracks shorter than one extract are skipped with a warning.
pub fn plan_epoch(
    tracks: &[(String, usize, u32)],
    cfg: &SamplerConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<PlannedExtract>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64));
    let mut plan = Vec::new();
    for (id, samples, sr) in tracks {
        let extract_n = (cfg.extract_seconds * *sr as f64).round() as usize;
        let stride_n = (cfg.stride_seconds * *sr as f64).round() as usize;
        let crop_n = (cfg.crop_seconds * *sr as f64).round() as usize;
        if extract_n == 0 || stride_n == 0 || crop_n == 0 {
            return Err(Error::arg("sampler windows shorter than one sample"));
        }
        if *samples < extract_n {
            log::warn!("track '{id}' shorter than one extract; skipped");
            continue;
        }
        let count = (samples - extract_n) / stride_n + 1;
        for k in 0..count {
            plan.push(PlannedExtract {
                track_id: id.clone(),
                offset_samples: k * stride_n,
                shift_samples: 0,
                crop_samples: crop_n,
            });
        }
    }
    plan.shuffle(&mut rng);
    for p in &mut plan {
        let sr = tracks
            .iter()
            .find(|(id, _, _)| *id == p.track_id)
            .map(|(_, _, sr)| *sr)
            .unwrap();
        let extract_n = (cfg.extract_seconds * sr as f64).round() as usize;
        let slack = extract_n - p.crop_samples;
        p.shift_samples = if slack > 0 { rng.gen_range(0..slack) } else { 0 };
    }
    Ok(plan)
}

/// Cuts the planned crop out of a loaded track; stems and mixture all slice
/// identically, so the mixture property carries over exactly.
pub fn materialize_extract(track: &SourceSet, plan: &PlannedExtract) -> Result<SourceSet> {
    let start = plan.offset_samples + plan.shift_samples;
    let mut out = SourceSet::new();
    for (name, wave) in track.stems() {
        out.push(name, wave.slice(start, plan.crop_samples)?)?;
    }
    if let Some(m) = track.explicit_mixture() {
        out.set_mixture(m.slice(start, plan.crop_samples)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Draw each output stem from a uniformly random batch item.
    pub shuffle_sources: bool,
    /// Per-stem probability of swapping left/right channels.
    pub channel_swap_prob: f64,
    /// Per-stem probability of multiplying by −1.
    pub sign_flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shuffle_sources: true,
            channel_swap_prob: 0.5,
            sign_flip_prob: 0.5,
        }
    }
}

fn swap_channels(w: &Waveform) -> Waveform {
    if w.channels() != 2 {
        return w.clone();
    }
    let chans = vec![w.channel(1).to_vec(), w.channel(0).to_vec()];
    Waveform::from_channels(chans, w.sample_rate()).unwrap()
}

fn flip_sign(w: &Waveform) -> Waveform {
    let mut out = w.clone();
    out.scale(-1.0);
    out
}

/// Remixes a batch: each output stem slot is drawn from a random batch item
/// (per-source shuffle), independently channel-swapped and sign-flipped,
/// and every output mixture is recomputed as the exact sum of its stems.
pub fn augment_batch(batch: &[SourceSet], cfg: &AugmentConfig, seed: u64) -> Result<Vec<SourceSet>> {
    if batch.is_empty() {
        return Err(Error::arg("cannot augment an empty batch"));
    }
    let names: Vec<String> = batch[0].names().iter().map(|s| s.to_string()).collect();
    for item in batch {
        if item.names() != names.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
            return Err(Error::arg("batch items disagree on stem names"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA46));
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut set = SourceSet::new();
        for name in &names {
            let donor = if cfg.shuffle_sources {
                rng.gen_range(0..batch.len())
            } else {
                i
            };
            let mut stem = batch[donor].get(name).unwrap().clone();
            if rng.gen::<f64>() < cfg.channel_swap_prob {
                stem = swap_channels(&stem);
            }
            if rng.gen::<f64>() < cfg.sign_flip_prob {
                stem = flip_sign(&stem);
            }
            set.push(name, stem)?;
        }
        let mixture = set.sum_stems()?;
        set.set_mixture(mixture)?;
        out.push(set);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_manifest() -> DatasetManifest {
        synthetic_manifest(40, (2, 1, 1), 2.0, 8000, true)
    }

    #[test]
    fn manifest_text_roundtrip() {
        let mut m = tiny_manifest();
        m.entries.push(TrackEntry {
            id: "ext_0".into(),
            split: Split::Test,
            source: TrackSource::Dir(PathBuf::from("data/ext_0")),
            duration_s: 30.0,
            sample_rate: 44100,
            channels: 2,
        });
        let text = m.to_text();
        let parsed = DatasetManifest::from_text(&text).unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn manifest_rejects_duplicates_and_unknown_keys() {
        let mut m = tiny_manifest();
        m.entries.push(m.entries[0].clone());
        assert!(m.validate().is_err());

        let err = DatasetManifest::from_text("track id=a split=train seed=1 duration=2 sample_rate=8000 channels=2 tempo=fast")
            .unwrap_err();
        assert!(err.to_string().contains("tempo"), "{err}");
    }

    #[test]
    fn split_membership() {
        let m = tiny_manifest();
        assert_eq!(m.split(Split::Train).len(), 2);
        assert_eq!(m.split(Split::Valid).len(), 1);
        assert_eq!(m.split(Split::Test).len(), 1);
    }

    #[test]
    fn track_dir_roundtrip_float_is_tight() {
        let set = synth_track(5, 1.5, 8000, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_track_dir(&set, dir.path(), WavEncoding::Float32).unwrap();
        let loaded = load_track_dir(dir.path()).unwrap();
        assert_eq!(loaded.names(), SOURCE_NAMES.to_vec());
        let dev = loaded.mixture_deviation().unwrap().unwrap();
        assert!(dev <= 1e-6, "deviation {dev}");
        for name in SOURCE_NAMES {
            let d = loaded
                .get(name)
                .unwrap()
                .max_abs_diff(set.get(name).unwrap())
                .unwrap();
            assert!(d <= 1e-6, "{name}: {d}");
        }
    }

    #[test]
    fn track_dir_roundtrip_pcm16_within_quantization_budget() {
        let set = synth_track(6, 1.5, 8000, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_track_dir(&set, dir.path(), WavEncoding::Pcm16).unwrap();
        let loaded = load_track_dir(dir.path()).unwrap();
        let dev = loaded.mixture_deviation().unwrap().unwrap();
        assert!(dev <= 1e-3, "deviation {dev}");
    }

    #[test]
    fn missing_stem_error_names_the_stem() {
        let set = synth_track(7, 1.0, 8000, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_track_dir(&set, dir.path(), WavEncoding::Float32).unwrap();
        std::fs::remove_file(dir.path().join("vocals.wav")).unwrap();
        let err = load_track_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("vocals"), "{err}");
    }

    #[test]
    fn epoch_covers_every_offset_once() {
        let tracks = vec![("t0".to_string(), 30 * 8000usize, 8000u32)];
        let cfg = SamplerConfig::default();
        let plan = plan_epoch(&tracks, &cfg, 1, 0).unwrap();
        assert_eq!(plan.len(), 20);
        let mut offsets: Vec<usize> = plan.iter().map(|p| p.offset_samples).collect();
        offsets.sort_unstable();
        let expect: Vec<usize> = (0..20).map(|k| k * 8000).collect();
        assert_eq!(offsets, expect);
        for p in &plan {
            assert_eq!(p.crop_samples, 10 * 8000);
            assert!(p.shift_samples < 8000, "shift within 1 s");
            assert!(p.offset_samples + p.shift_samples + p.crop_samples <= 30 * 8000);
        }
    }

    #[test]
    fn epochs_are_deterministic_and_distinct() {
        let tracks = vec![
            ("t0".to_string(), 30 * 8000usize, 8000u32),
            ("t1".to_string(), 30 * 8000usize, 8000u32),
        ];
        let cfg = SamplerConfig::default();
        let a = plan_epoch(&tracks, &cfg, 9, 0).unwrap();
        let b = plan_epoch(&tracks, &cfg, 9, 0).unwrap();
        assert_eq!(a, b);
        let c = plan_epoch(&tracks, &cfg, 9, 1).unwrap();
        assert_ne!(a, c);
        let d = plan_epoch(&tracks, &cfg, 10, 0).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn short_tracks_are_skipped() {
        let tracks = vec![
            ("long".to_string(), 30 * 8000usize, 8000u32),
            ("short".to_string(), 5 * 8000usize, 8000u32),
        ];
        let plan = plan_epoch(&tracks, &SamplerConfig::default(), 0, 0).unwrap();
        assert!(plan.iter().all(|p| p.track_id == "long"));
        assert_eq!(plan.len(), 20);
    }

    #[test]
    fn materialized_crops_preserve_the_mixture_exactly() {
        let track = synth_track(3, 13.0, 8000, true).unwrap();
        let plan = PlannedExtract {
            track_id: "x".into(),
            offset_samples: 8000,
            shift_samples: 321,
            crop_samples: 10 * 8000,
        };
        let crop = materialize_extract(&track, &plan).unwrap();
        assert_eq!(crop.mixture().unwrap().len(), 10 * 8000);
        assert_eq!(crop.mixture_deviation().unwrap(), Some(0.0));
    }

    #[test]
    fn augment_identity_when_disabled() {
        let batch = vec![synth_track(1, 1.0, 8000, true).unwrap()];
        let cfg = AugmentConfig {
            shuffle_sources: false,
            channel_swap_prob: 0.0,
            sign_flip_prob: 0.0,
        };
        let out = augment_batch(&batch, &cfg, 5).unwrap();
        for name in SOURCE_NAMES {
            assert_eq!(
                out[0].get(name).unwrap().samples(),
                batch[0].get(name).unwrap().samples()
            );
        }
        assert_eq!(out[0].mixture_deviation().unwrap(), Some(0.0));
    }

    #[test]
    fn augment_involutions() {
        // With both probabilities forced to 1 and shuffling off, applying
        // the augmentation twice undoes itself (swap∘swap = flip∘flip = id).
        let batch = vec![synth_track(2, 1.0, 8000, true).unwrap()];
        let cfg = AugmentConfig {
            shuffle_sources: false,
            channel_swap_prob: 1.0,
            sign_flip_prob: 1.0,
        };
        let once = augment_batch(&batch, &cfg, 5).unwrap();
        let twice = augment_batch(&once, &cfg, 6).unwrap();
        for name in SOURCE_NAMES {
            assert_eq!(
                twice[0].get(name).unwrap().samples(),
                batch[0].get(name).unwrap().samples()
            );
        }
        // And the flipped version is genuinely different from the input.
        assert_ne!(
            once[0].get("drums").unwrap().samples(),
            batch[0].get("drums").unwrap().samples()
        );
    }

    #[test]
    fn augment_recomputes_the_mixture_and_is_deterministic() {
        let batch: Vec<SourceSet> = (0..3)
            .map(|s| synth_track(s, 1.0, 8000, true).unwrap())
            .collect();
        let cfg = AugmentConfig::default();
        let a = augment_batch(&batch, &cfg, 11).unwrap();
        let b = augment_batch(&batch, &cfg, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mixture_deviation().unwrap(), Some(0.0));
            assert_eq!(
                x.mixture().unwrap().samples(),
                y.mixture().unwrap().samples()
            );
        }
        let c = augment_batch(&batch, &cfg, 12).unwrap();
        let same = a
            .iter()
            .zip(&c)
            .all(|(x, y)| x.mixture().unwrap().samples() == y.mixture().unwrap().samples());
        assert!(!same, "different augmentation seeds should differ");
    }
}
