//! Structured-text configuration: `key = value` lines under `[section]`
//! headers, `#` comments. Every key must be consumed by the typed loader —
//! unknown keys are errors that name the offending `section.key`, so typos
//! fail loudly instead of silently training with defaults.

use std::cell::Cell;
use std::path::PathBuf;

use crate::convtasnet::ConvTasnetSpec;
use crate::data::{AugmentConfig, SamplerConfig};
use crate::demucs::DemucsSpec;
use crate::error::{Error, Result};

struct Item {
    section: String,
    key: String,
    value: String,
    line: usize,
    consumed: Cell<bool>,
}

pub struct ConfigDoc {
    items: Vec<Item>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {}: unclosed section", idx + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{line}'", idx + 1))
            })?;
            items.push(Item {
                section: section.clone(),
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                line: idx + 1,
                consumed: Cell::new(false),
            });
        }
        Ok(ConfigDoc { items })
    }

    fn qualified(section: &str, key: &str) -> String {
        if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        // Last occurrence wins, but all duplicates count as consumed.
        let mut found = None;
        for item in &self.items {
            if item.section == section && item.key == key {
                item.consumed.set(true);
                found = Some(item.value.as_str());
            }
        }
        found
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::config(format!(
                    "bad value '{v}' for key '{}'",
                    Self::qualified(section, key)
                ))
            }),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some("true") | Some("1") | Some("yes") => Ok(Some(true)),
            Some("false") | Some("0") | Some("no") => Ok(Some(false)),
            Some(v) => Err(Error::config(format!(
                "bad boolean '{v}' for key '{}'",
                Self::qualified(section, key)
            ))),
        }
    }

    /// Errors on the first key no loader asked for.
    pub fn ensure_consumed(&self) -> Result<()> {
        for item in &self.items {
            if !item.consumed.get() {
                return Err(Error::config(format!(
                    "unknown config key '{}' (line {})",
                    Self::qualified(&item.section, &item.key),
                    item.line
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::config(format!("unknown loss '{other}' (use l1 or l2)"))),
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Demucs,
    ConvTasnet,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "demucs" => Ok(ModelKind::Demucs),
            "convtasnet" => Ok(ModelKind::ConvTasnet),
            other => Err(Error::config(format!(
                "unknown model '{other}' (use demucs or convtasnet)"
            ))),
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Demucs => "demucs",
            ModelKind::ConvTasnet => "convtasnet",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub threads: usize,
    pub manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub sampler: SamplerConfig,
    pub augment: AugmentConfig,
    pub demucs: DemucsSpec,
    pub convtasnet: ConvTasnetSpec,
}

impl TrainConfig {
    /// Desk-scale defaults for one model kind. The extract/crop lengths are
    /// per-model: long crops for the U-net, short extracts for the masking
    /// network.
    pub fn desk(model: ModelKind) -> Self {
        let sampler = match model {
            ModelKind::Demucs => SamplerConfig {
                extract_seconds: 11.0,
                stride_seconds: 1.0,
                crop_seconds: 10.0,
            },
            ModelKind::ConvTasnet => SamplerConfig {
                extract_seconds: 3.0,
                stride_seconds: 1.0,
                crop_seconds: 2.0,
            },
        };
        TrainConfig {
            model,
            loss: LossKind::L1,
            learning_rate: 3e-4,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            grad_clip: 5.0,
            threads: 0,
            manifest: PathBuf::from("manifest.txt"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            sampler,
            augment: AugmentConfig::default(),
            demucs: DemucsSpec::default(),
            convtasnet: ConvTasnetSpec::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment.channel_swap_prob)
            || !(0.0..=1.0).contains(&self.augment.sign_flip_prob)
        {
            return Err(Error::config("augmentation probabilities must be in [0, 1]"));
        }
        self.sampler.validate()?;
        match self.model {
            ModelKind::Demucs => self.demucs.validate()?,
            ModelKind::ConvTasnet => self.convtasnet.validate()?,
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = ConfigDoc::parse(text)?;
        let model = match doc.get("training", "model") {
            Some(v) => ModelKind::parse(v)?,
            None => ModelKind::Demucs,
        };
        let mut cfg = TrainConfig::desk(model);
        if let Some(v) = doc.get("training", "loss") {
            cfg.loss = LossKind::parse(v)?;
        }
        if let Some(v) = doc.get_parsed("training", "learning_rate")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = doc.get_parsed("training", "batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = doc.get_parsed("training", "epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = doc.get_parsed("training", "seed")? {
            cfg.seed = v;
        }
        if let Some(v) = doc.get_parsed("training", "grad_clip")? {
            cfg.grad_clip = v;
        }
        if let Some(v) = doc.get_parsed("training", "threads")? {
            cfg.threads = v;
        }
        if let Some(v) = doc.get("data", "manifest") {
            cfg.manifest = PathBuf::from(v);
        }
        if let Some(v) = doc.get_parsed("data", "extract_seconds")? {
            cfg.sampler.extract_seconds = v;
        }
        if let Some(v) = doc.get_parsed("data", "stride_seconds")? {
            cfg.sampler.stride_seconds = v;
        }
        if let Some(v) = doc.get_parsed("data", "crop_seconds")? {
            cfg.sampler.crop_seconds = v;
        }
        if let Some(v) = doc.get_bool("augment", "shuffle_sources")? {
            cfg.augment.shuffle_sources = v;
        }
        if let Some(v) = doc.get_parsed("augment", "channel_swap_prob")? {
            cfg.augment.channel_swap_prob = v;
        }
        if let Some(v) = doc.get_parsed("augment", "sign_flip_prob")? {
            cfg.augment.sign_flip_prob = v;
        }
        if let Some(v) = doc.get("output", "checkpoint_dir") {
            cfg.checkpoint_dir = PathBuf::from(v);
        }

        // Model hyper-parameters; only the active model's section is read,
        // but both sections are accepted so one file can describe both.
        if let Some(v) = doc.get_parsed("demucs", "depth")? {
            cfg.demucs.depth = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "initial_channels")? {
            cfg.demucs.initial_channels = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "growth")? {
            cfg.demucs.growth = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "kernel")? {
            cfg.demucs.kernel = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "stride")? {
            cfg.demucs.stride = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "lstm_layers")? {
            cfg.demucs.lstm_layers = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "context")? {
            cfg.demucs.context = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "rescale")? {
            cfg.demucs.rescale = v;
        }
        if let Some(v) = doc.get_bool("demucs", "glu")? {
            cfg.demucs.glu = v;
        }
        if let Some(v) = doc.get_bool("demucs", "decoder_glu")? {
            cfg.demucs.decoder_glu = v;
        }
        if let Some(v) = doc.get_parsed("demucs", "audio_channels")? {
            cfg.demucs.audio_channels = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "frontend_kernel")? {
            cfg.convtasnet.frontend_kernel = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "frontend_stride")? {
            cfg.convtasnet.frontend_stride = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "frontend_channels")? {
            cfg.convtasnet.frontend_channels = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "block_channels")? {
            cfg.convtasnet.block_channels = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "repeats")? {
            cfg.convtasnet.repeats = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "blocks_per_repeat")? {
            cfg.convtasnet.blocks_per_repeat = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "block_kernel")? {
            cfg.convtasnet.block_kernel = v;
        }
        if let Some(v) = doc.get_parsed("convtasnet", "audio_channels")? {
            cfg.convtasnet.audio_channels = v;
        }

        doc.ensure_consumed()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
