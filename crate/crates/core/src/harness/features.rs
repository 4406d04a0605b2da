use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use super::{HarnessError, SpeakerSource, TrainConfig};
use crate::audio::{load_wav, mel_spectrogram, spectrogram_to_image, MelSpectrogram, Waveform};
use crate::augment::{apply_spec_mask, apply_time_augmentation, derive_seed, SpecMaskSpec, TimeAugmentSpec};
use crate::corpus::Sample;
use crate::nn::Tensor;
use crate::speaker::{load_store, EmbeddingStore, PcaModel, ToySpeakerEncoder};

/// Augmentation used to synthesise `synthetic_id`.
pub fn synthetic_spec(cfg: &TrainConfig, synthetic_id: &str) -> TimeAugmentSpec {
    let kind = derive_seed(cfg.seed, &format!("kind/{synthetic_id}")) as usize % 5;
    cfg.augment.draw(kind, derive_seed(cfg.seed, &format!("aug/{synthetic_id}")))
}

pub fn resolve_audio(base_dir: &Path, audio_path: &str) -> PathBuf {
    let p = Path::new(audio_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Model inputs keyed by sample id.
#[derive(Clone, Debug, Default)]
pub struct Features {
    pub images: BTreeMap<String, Tensor>,
    /// Raw speaker embeddings, present only for fusion variants.
    pub raw_embeddings: BTreeMap<String, Vec<f64>>,
    /// Spectrograms kept for on-the-fly masking.
    pub mels: BTreeMap<String, MelSpectrogram>,
}

impl Features {
    pub fn image(&self, id: &str) -> Result<&Tensor, HarnessError> {
        self.images.get(id).ok_or_else(|| HarnessError::Sample {
            id: id.into(),
            reason: "no features computed".into(),
        })
    }

    /// `id`'s image after applying `masks` with seeds derived from `seed`.
    pub fn masked_image(&self, id: &str, masks: &[SpecMaskSpec], seed: u64, height: usize, width: usize) -> Result<Tensor, HarnessError> {
        let fail = |reason: String| HarnessError::Sample { id: id.into(), reason };
        let mut mel = self.mels.get(id).ok_or_else(|| fail("no spectrogram kept".into()))?.clone();
        for (i, m) in masks.iter().enumerate() {
            let spec = SpecMaskSpec {
                seed: derive_seed(seed, &format!("mask/{i}/{id}")),
                ..*m
            };
            mel = apply_spec_mask(&mel, &spec).map_err(|e| fail(e.to_string()))?;
        }
        Ok(spectrogram_to_image(&mel, height, width)?.pixels)
    }
}

enum Embedder {
    Toy(Box<ToySpeakerEncoder>),
    Store(EmbeddingStore),
}

/// Loads, crops, augments and featurises utterances, caching decoded audio.
pub struct FeatureBuilder<'a> {
    cfg: &'a TrainConfig,
    base_dir: PathBuf,
    embedder: Option<Embedder>,
    waves: HashMap<String, Waveform>,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(cfg: &'a TrainConfig, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let embedder = if cfg.model.fusion.uses_speaker() {
            Some(match &cfg.speaker {
                SpeakerSource::Toy => Embedder::Toy(Box::default()),
                SpeakerSource::Store { path } => Embedder::Store(load_store(path)?),
            })
        } else {
            None
        };
        Ok(FeatureBuilder {
            cfg,
            base_dir: base_dir.into(),
            embedder,
            waves: HashMap::new(),
        })
    }

    fn waveform(&mut self, s: &Sample) -> Result<Waveform, HarnessError> {
        if let Some(w) = self.waves.get(&s.id) {
            return Ok(w.clone());
        }
        let path = resolve_audio(&self.base_dir, &s.audio_path);
        let w = load_wav(&path)
            .map_err(|e| HarnessError::Sample {
                id: s.id.clone(),
                reason: e.to_string(),
            })?
            .fit_duration(self.cfg.clip_seconds);
        self.waves.insert(s.id.clone(), w.clone());
        Ok(w)
    }

    fn image(&self, id: &str, w: &Waveform, out: &mut Features) -> Result<(), HarnessError> {
        let m = &self.cfg.model;
        let mel = mel_spectrogram(w, &self.cfg.spectrogram).map_err(|e| HarnessError::Sample {
            id: id.into(),
            reason: e.to_string(),
        })?;
        out.images.insert(id.into(), spectrogram_to_image(&mel, m.image_height, m.image_width)?.pixels);
        if !self.cfg.spec_masks.is_empty() {
            out.mels.insert(id.into(), mel);
        }
        Ok(())
    }

    fn embed(&self, id: &str, w: &Waveform) -> Result<Option<Vec<f64>>, HarnessError> {
        let fail = |reason: String| HarnessError::Sample { id: id.into(), reason };
        match &self.embedder {
            None => Ok(None),
            Some(Embedder::Toy(enc)) => Ok(Some(enc.embed(id, w).map_err(|e| fail(e.to_string()))?.vector)),
            Some(Embedder::Store(store)) => Ok(Some(
                store.require(id).map_err(|e| fail(e.to_string()))?.to_vec(),
            )),
        }
    }

    /// Featurises an original utterance.
    pub fn add(&mut self, s: &Sample, out: &mut Features) -> Result<(), HarnessError> {
        if out.images.contains_key(&s.id) {
            return Ok(());
        }
        let w = self.waveform(s)?;
        self.image(&s.id, &w, out)?;
        if let Some(e) = self.embed(&s.id, &w)? {
            out.raw_embeddings.insert(s.id.clone(), e);
        }
        Ok(())
    }

    /// Featurises a synthetic copy of `source`. The copy inherits the
    /// source's speaker embedding.
    pub fn add_synthetic(&mut self, synth: &Sample, source: &Sample, out: &mut Features) -> Result<(), HarnessError> {
        self.add(source, out)?;
        let spec = synthetic_spec(self.cfg, &synth.id);
        let w = apply_time_augmentation(&self.waveform(source)?, &spec)
            .map_err(|e| HarnessError::Sample {
                id: synth.id.clone(),
                reason: e.to_string(),
            })?
            .fit_duration(self.cfg.clip_seconds);
        self.image(&synth.id, &w, out)?;
        if let Some(e) = out.raw_embeddings.get(&source.id).cloned() {
            out.raw_embeddings.insert(synth.id.clone(), e);
        }
        Ok(())
    }
}

/// PCA projection rescaled so the projected coordinates have unit mean
/// variance.
pub fn project_speaker(pca: &PcaModel, raw: &[f64]) -> Result<Vec<f64>, HarnessError> {
    let mean_var = pca.eigenvalues.iter().sum::<f64>() / pca.eigenvalues.len() as f64;
    let scale = if mean_var > 0.0 { 1.0 / mean_var.sqrt() } else { 1.0 };
    Ok(pca.project(raw)?.into_iter().map(|v| v * scale).collect())
}
