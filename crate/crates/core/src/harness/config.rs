use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::audio::SpectrogramConfig;
use crate::augment::{AugmentRanges, SpecMaskSpec};
use crate::corpus::LabelScheme;
use crate::model::{CctConfig, FusionVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balancing {
    Undersample,
    Augment,
    None,
}

impl Balancing {
    /// Column suffix in cross-corpus tables.
    pub fn short(self) -> &'static str {
        match self {
            Balancing::Undersample => "us",
            Balancing::Augment => "aug",
            Balancing::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeakerSource {
    /// Compute embeddings with the built-in toy encoder.
    Toy,
    /// Read precomputed embeddings from a store file, keyed by sample id.
    Store { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub balancing: Balancing,
    pub label_scheme: LabelScheme,
    /// Every utterance is centre-cropped or zero-padded to this length.
    pub clip_seconds: f64,
    pub model: CctConfig,
    pub spectrogram: SpectrogramConfig,
    pub augment: AugmentRanges,
    pub speaker: SpeakerSource,
    /// Masks applied on the fly to training spectrograms, redrawn for every
    /// example and epoch. Their `seed` fields are ignored.
    pub spec_masks: Vec<SpecMaskSpec>,
    /// Stop once a full pass over the training split reaches this accuracy.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 5.0e-5,
            seed: 0,
            balancing: Balancing::Undersample,
            label_scheme: LabelScheme::FourClass,
            clip_seconds: 3.0,
            model: CctConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            augment: AugmentRanges::default(),
            speaker: SpeakerSource::Toy,
            spec_masks: Vec::new(),
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// Small, fast settings for the synthetic desk corpus.
    pub fn desk(fusion: FusionVariant) -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            clip_seconds: 0.6,
            model: CctConfig {
                image_height: 16,
                image_width: 16,
                conv_hidden: 16,
                fusion,
                ..CctConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config("learning_rate must be positive".into()));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(HarnessError::Config("clip_seconds must be positive".into()));
        }
        if self.model.num_classes != self.label_scheme.num_classes() {
            return Err(HarnessError::Config(format!(
                "model.num_classes is {} but the {:?} scheme has {} classes",
                self.model.num_classes,
                self.label_scheme,
                self.label_scheme.num_classes()
            )));
        }
        if let Some(t) = self.stop_at_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(HarnessError::Config("stop_at_train_accuracy must lie in [0, 1]".into()));
            }
        }
        if self.model.in_channels != 3 {
            return Err(HarnessError::Config("spectrogram images have 3 channels".into()));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Corpus roles for the cross-corpus rotation. Each corpus in `held_out` is
/// tested once. Its validation set is `extra_val`, plus the other held-out
/// corpora when `val_from_held_out` is set. Training uses `train`, or every
/// remaining corpus when `train` is empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossCorpusConfig {
    pub train: Vec<String>,
    pub held_out: Vec<String>,
    pub extra_val: Vec<String>,
    pub val_from_held_out: bool,
    pub variants: Vec<FusionVariant>,
    pub balancing: Vec<Balancing>,
}

impl Default for CrossCorpusConfig {
    fn default() -> Self {
        CrossCorpusConfig {
            train: vec!["iemocap".into(), "demos".into()],
            held_out: vec!["emodb".into(), "emovo".into(), "savee".into()],
            extra_val: vec!["ravdess".into()],
            val_from_held_out: true,
            variants: FusionVariant::ALL.to_vec(),
            balancing: vec![Balancing::Undersample, Balancing::Augment],
        }
    }
}
