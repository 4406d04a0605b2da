//! Waveform augmentations used for oversampling, and time/frequency masks
//! applied to mel spectrograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{MelSpectrogram, Waveform};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation: {0}")]
    Config(String),
}

/// Stable per-item seed derived from a global seed and an identifier, so
/// results do not depend on processing order.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeAugment {
    /// White Gaussian noise at the given signal-to-noise ratio.
    Noise { snr_db: f64 },
    /// Rescale so the absolute peak equals `target_peak`.
    Normalize { target_peak: f64 },
    /// Resample by `2^(semitones/12)` and interpolate back to the original length.
    PitchShift { semitones: f64 },
    /// Circular rotation by `fraction · len` samples.
    TimeShift { fraction: f64 },
    /// Linear-interpolation resampling to `round(len / factor)` samples.
    SpeedChange { factor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAugmentSpec {
    #[serde(flatten)]
    pub op: TimeAugment,
    #[serde(default)]
    pub seed: u64,
}

impl TimeAugmentSpec {
    pub fn new(op: TimeAugment, seed: u64) -> Self {
        Self { op, seed }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::Config(m));
        match self.op {
            TimeAugment::Noise { snr_db } if !(5.0..=40.0).contains(&snr_db) => {
                bad(format!("SNR {snr_db} dB outside [5, 40]"))
            }
            TimeAugment::Normalize { target_peak } if !(target_peak > 0.0 && target_peak.is_finite()) => {
                bad(format!("target peak {target_peak} must be positive"))
            }
            TimeAugment::PitchShift { semitones } if !(-12.0..=12.0).contains(&semitones) => {
                bad(format!("pitch shift {semitones} semitones outside [-12, 12]"))
            }
            TimeAugment::TimeShift { fraction } if !(-0.5..=0.5).contains(&fraction) => {
                bad(format!("shift fraction {fraction} outside [-0.5, 0.5]"))
            }
            TimeAugment::SpeedChange { factor } if !(0.5..=2.0).contains(&factor) => {
                bad(format!("speed factor {factor} outside [0.5, 2]"))
            }
            _ => Ok(()),
        }
    }
}

/// Sampling ranges for randomly drawn augmentations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentRanges {
    pub snr_db: (f64, f64),
    pub target_peak: (f64, f64),
    pub semitones: f64,
    pub shift_fraction: f64,
    pub speed: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            snr_db: (15.0, 30.0),
            target_peak: (0.5, 0.95),
            semitones: 2.0,
            shift_fraction: 0.25,
            speed: (0.8, 1.25),
        }
    }
}

impl AugmentRanges {
    /// Draws augmentation number `kind % 5` (noise, normalize, pitch, shift,
    /// speed) with parameters from these ranges. Magnitudes are kept away
    /// from the identity so every draw alters the signal.
    pub fn draw(&self, kind: usize, seed: u64) -> TimeAugmentSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let op = match kind % 5 {
            0 => TimeAugment::Noise {
                snr_db: rng.gen_range(self.snr_db.0..=self.snr_db.1),
            },
            1 => TimeAugment::Normalize {
                target_peak: rng.gen_range(self.target_peak.0..=self.target_peak.1),
            },
            2 => TimeAugment::PitchShift {
                semitones: sign(&mut rng) * rng.gen_range(0.25 * self.semitones..=self.semitones),
            },
            3 => TimeAugment::TimeShift {
                fraction: sign(&mut rng)
                    * rng.gen_range(0.2 * self.shift_fraction..=self.shift_fraction),
            },
            _ => {
                let (lo, hi) = self.speed;
                let factor = if rng.gen_bool(0.5) {
                    rng.gen_range(lo..=1.0 - 0.25 * (1.0 - lo))
                } else {
                    rng.gen_range(1.0 + 0.25 * (hi - 1.0)..=hi)
                };
                TimeAugment::SpeedChange { factor }
            }
        };
        TimeAugmentSpec::new(op, rng.gen())
    }

    /// One spec of each of the five kinds.
    pub fn bank(&self, seed: u64) -> Vec<TimeAugmentSpec> {
        (0..5)
            .map(|k| self.draw(k, derive_seed(seed, &format!("bank{k}"))))
            .collect()
    }
}

pub fn apply_time_augmentation(w: &Waveform, spec: &TimeAugmentSpec) -> Result<Waveform, AugmentError> {
    spec.validate()?;
    let samples = match spec.op {
        TimeAugment::Noise { snr_db } => {
            let n = w.len().max(1) as f64;
            let signal_power = w.energy() / n;
            let sigma = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            w.samples
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s + sigma * z
                })
                .collect()
        }
        TimeAugment::Normalize { target_peak } => {
            let peak = w.peak();
            if peak == 0.0 {
                w.samples.clone()
            } else {
                w.samples.iter().map(|s| s * target_peak / peak).collect()
            }
        }
        TimeAugment::TimeShift { fraction } => {
            let n = w.len();
            let mut out = w.samples.clone();
            if n > 0 {
                let k = ((fraction * n as f64).round() as i64).rem_euclid(n as i64) as usize;
                out.rotate_right(k);
            }
            out
        }
        TimeAugment::SpeedChange { factor } => {
            let target = ((w.len() as f64) / factor).round().max(1.0) as usize;
            resample_linear(&w.samples, target, factor)
        }
        TimeAugment::PitchShift { semitones } => {
            let factor = 2f64.powf(semitones / 12.0);
            let target = ((w.len() as f64) / factor).round().max(1.0) as usize;
            let sped = resample_linear(&w.samples, target, factor);
            stretch_to(&sped, w.len())
        }
    };
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Reads `src` at positions `i · step` with linear interpolation.
fn resample_linear(src: &[f64], len: usize, step: f64) -> Vec<f64> {
    if src.is_empty() {
        return vec![0.0; len];
    }
    let last = src.len() - 1;
    (0..len)
        .map(|i| {
            let pos = (i as f64 * step).min(last as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(last);
            let f = pos - i0 as f64;
            src[i0] * (1.0 - f) + src[i1] * f
        })
        .collect()
}

/// Linear interpolation onto `len` points spanning the same support.
fn stretch_to(src: &[f64], len: usize) -> Vec<f64> {
    if len <= 1 || src.len() <= 1 {
        return vec![src.first().copied().unwrap_or(0.0); len];
    }
    let step = (src.len() - 1) as f64 / (len - 1) as f64;
    resample_linear(src, len, step)
}

/// One augmented copy per spec; the original is not included.
pub fn expand_sample(w: &Waveform, specs: &[TimeAugmentSpec]) -> Result<Vec<Waveform>, AugmentError> {
    if specs.is_empty() {
        return Err(AugmentError::Config("empty augmentation list".into()));
    }
    specs.iter().map(|s| apply_time_augmentation(w, s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAxis {
    /// Masks whole frames (columns).
    Time,
    /// Masks whole mel bands (rows).
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    Zero,
    /// Global mean of the spectrogram before masking.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecMaskSpec {
    pub axis: MaskAxis,
    pub max_width: usize,
    pub num_masks: usize,
    pub fill: MaskFill,
    #[serde(default)]
    pub seed: u64,
}

/// A masked band `[start, start + width)` along the spec's axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRegion {
    pub start: usize,
    pub width: usize,
}

pub fn apply_spec_mask(m: &MelSpectrogram, spec: &SpecMaskSpec) -> Result<MelSpectrogram, AugmentError> {
    apply_spec_mask_logged(m, spec).map(|(out, _)| out)
}

/// Like [`apply_spec_mask`], also returning the drawn regions.
pub fn apply_spec_mask_logged(
    m: &MelSpectrogram,
    spec: &SpecMaskSpec,
) -> Result<(MelSpectrogram, Vec<MaskRegion>), AugmentError> {
    let (rows, cols) = (m.n_mels(), m.n_frames());
    let dim = match spec.axis {
        MaskAxis::Time => cols,
        MaskAxis::Frequency => rows,
    };
    if spec.max_width >= dim {
        return Err(AugmentError::Config(format!(
            "mask width {} must be smaller than the axis length {dim}",
            spec.max_width
        )));
    }
    let fill = match spec.fill {
        MaskFill::Zero => 0.0,
        MaskFill::Mean => m.values.data().iter().sum::<f64>() / m.values.len() as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = m.clone();
    let mut regions = Vec::with_capacity(spec.num_masks);
    for _ in 0..spec.num_masks {
        let width = rng.gen_range(0..=spec.max_width);
        let start = rng.gen_range(0..=dim - width);
        regions.push(MaskRegion { start, width });
        let data = out.values.data_mut();
        for i in start..start + width {
            match spec.axis {
                MaskAxis::Time => (0..rows).for_each(|r| data[r * cols + i] = fill),
                MaskAxis::Frequency => data[i * cols..(i + 1) * cols].fill(fill),
            }
        }
    }
    Ok((out, regions))
}
