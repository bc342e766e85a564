use crate::error::{Error, Result};

/// Canonical stem order used everywhere a track is split into sources.
/// Index positions are stable: estimates, references, metric rows and
/// checkpointed mask heads all use this ordering.
pub const SOURCE_NAMES: [&str; 4] = ["drums", "bass", "other", "vocals"];

pub const NUM_SOURCES: usize = SOURCE_NAMES.len();

/// Multichannel audio buffer, planar layout: channel `c` occupies
/// `data[c*len .. (c+1)*len]`. Samples are `f64` so that DSP round trips and
/// metric decompositions are limited by algorithmic tolerance, not storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    data: Vec<f64>,
    channels: usize,
    len: usize,
    sample_rate: u32,
}

impl Waveform {
    /// Wraps planar samples. Rejects channel counts other than 1 or 2,
    /// length/sample-count inconsistency, zero sample rate and non-finite
    /// samples.
    pub fn new(data: Vec<f64>, channels: usize, sample_rate: u32) -> Result<Self> {
        if channels != 1 && channels != 2 {
            return Err(Error::arg(format!(
                "waveform must be mono or stereo, got {channels} channels"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if data.len() % channels != 0 {
            return Err(Error::shape(format!(
                "sample buffer of {} values is not divisible by {} channels",
                data.len(),
                channels
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite sample at flat index {bad}"
            )));
        }
        let len = data.len() / channels;
        Ok(Waveform {
            data,
            channels,
            len,
            sample_rate,
        })
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; channels * len], channels, sample_rate)
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let n = channels.len();
        if n == 0 {
            return Err(Error::arg("waveform needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("channels differ in length"));
        }
        let mut data = Vec::with_capacity(n * len);
        for ch in channels {
            data.extend(ch);
        }
        Self::new(data, n, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    /// Flat planar buffer, `channels * len` values.
    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Errors unless `other` has identical channel count, length and sample
    /// rate; most cross-waveform operations require this.
    pub fn check_aligned(&self, other: &Waveform) -> Result<()> {
        if self.channels != other.channels
            || self.len != other.len
            || self.sample_rate != other.sample_rate
        {
            return Err(Error::shape(format!(
                "waveforms not aligned: ({}ch, {} samples, {} Hz) vs ({}ch, {} samples, {} Hz)",
                self.channels,
                self.len,
                self.sample_rate,
                other.channels,
                other.len,
                other.sample_rate
            )));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Waveform) -> Result<()> {
        self.check_aligned(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Waveform) -> Result<Waveform> {
        self.check_aligned(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Waveform::new(data, self.channels, self.sample_rate)
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn peak(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Copies `[start, start+len)` out of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Waveform> {
        if start + len > self.len {
            return Err(Error::arg(format!(
                "slice [{start}, {}) out of range for {} samples",
                start + len,
                self.len
            )));
        }
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        Waveform::new(data, self.channels, self.sample_rate)
    }

    /// Largest absolute difference over all samples; waveforms must align.
    pub fn max_abs_diff(&self, other: &Waveform) -> Result<f64> {
        self.check_aligned(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// One track's stems in canonical order, with an optional explicit mixture.
/// All waveforms inside a set are mutually aligned.
#[derive(Debug, Clone)]
pub struct SourceSet {
    stems: Vec<(String, Waveform)>,
    mixture: Option<Waveform>,
}

impl SourceSet {
    pub fn new() -> Self {
        SourceSet {
            stems: Vec::new(),
            mixture: None,
        }
    }

    fn reference(&self) -> Option<&Waveform> {
        self.stems
            .first()
            .map(|(_, w)| w)
            .or(self.mixture.as_ref())
    }

    pub fn push(&mut self, name: &str, wave: Waveform) -> Result<()> {
        if self.stems.iter().any(|(n, _)| n == name) {
            return Err(Error::arg(format!("duplicate stem name '{name}'")));
        }
        if let Some(r) = self.reference() {
            r.check_aligned(&wave)?;
        }
        self.stems.push((name.to_string(), wave));
        Ok(())
    }

    pub fn set_mixture(&mut self, wave: Waveform) -> Result<()> {
        if let Some(r) = self.reference() {
            r.check_aligned(&wave)?;
        }
        self.mixture = Some(wave);
        Ok(())
    }

    pub fn stems(&self) -> &[(String, Waveform)] {
        &self.stems
    }

    pub fn names(&self) -> Vec<&str> {
        self.stems.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Waveform> {
        self.stems
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, w)| w)
    }

    pub fn num_stems(&self) -> usize {
        self.stems.len()
    }

    pub fn explicit_mixture(&self) -> Option<&Waveform> {
        self.mixture.as_ref()
    }

    pub fn sum_stems(&self) -> Result<Waveform> {
        let first = self
            .stems
            .first()
            .ok_or_else(|| Error::arg("source set has no stems"))?;
        let mut sum = Waveform::zeros(first.1.channels(), first.1.len(), first.1.sample_rate())?;
        for (_, w) in &self.stems {
            sum.add_assign(w)?;
        }
        Ok(sum)
    }

    /// The explicit mixture when present, otherwise the stem sum.
    pub fn mixture(&self) -> Result<Waveform> {
        match &self.mixture {
            Some(m) => Ok(m.clone()),
            None => self.sum_stems(),
        }
    }

    /// Max absolute deviation between the explicit mixture and the stem sum;
    /// `None` when no explicit mixture is stored.
    pub fn mixture_deviation(&self) -> Result<Option<f64>> {
        match &self.mixture {
            Some(m) => Ok(Some(m.max_abs_diff(&self.sum_stems()?)?)),
            None => Ok(None),
        }
    }
}

impl Default for SourceSet {
    fn default() -> Self {
        Self::new()
    }
}
