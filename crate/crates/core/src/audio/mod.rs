//! Waveform I/O and log-Mel spectrogram extraction.

mod image;
mod spectrogram;
mod wav;

use thiserror::Error;

pub use self::image::{
    read_matrix, resize_bilinear, spectrogram_to_image, write_matrix, write_spectrogram_png,
    SpectrogramImage,
};
pub use spectrogram::{
    hz_to_mel, mel_centers, mel_filterbank, mel_spectrogram, mel_to_hz, n_frames, stft_power, window,
    MelSpectrogram, SpectrogramConfig, WindowKind,
};
pub use wav::{load_wav, write_wav};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(String),
    #[error("malformed WAV file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    Unsupported { path: String, reason: String },
    #[error("waveform too short: {got} samples, need at least {needed}")]
    TooShort { got: usize, needed: usize },
    #[error("invalid spectrogram config: {0}")]
    Config(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("empty spectrogram")]
    Empty,
    #[error("image encoding: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono PCM samples, nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Center-crops or pads with trailing silence to exactly `seconds`.
    pub fn fit_duration(&self, seconds: f64) -> Waveform {
        let target = (seconds * self.sample_rate as f64).round() as usize;
        let samples = match self.samples.len() {
            n if n > target => {
                let start = (n - target) / 2;
                self.samples[start..start + target].to_vec()
            }
            n => {
                let mut s = self.samples.clone();
                s.resize(target.max(n), 0.0);
                s
            }
        };
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn fit_duration_crops_center_and_pads_tail() {
        let w = Waveform::new((0..10).map(f64::from).collect(), 10).unwrap();
        assert_eq!(w.fit_duration(0.4).samples, vec![3.0, 4.0, 5.0, 6.0]);
        let p = w.fit_duration(1.2);
        assert_eq!(p.len(), 12);
        assert_eq!(&p.samples[10..], &[0.0, 0.0]);
    }
}
