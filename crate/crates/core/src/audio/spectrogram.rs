use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioError, Waveform};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WindowKind {
    /// `0.54 − 0.46·cos(2πn/(N−1))`
    #[default]
    Hamming,
    /// `0.5 − 0.5·cos(2πn/(N−1))`
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrogramConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window: WindowKind,
    pub n_mels: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
    /// Defaults to the next power of two at or above the window length.
    pub fft_size: Option<usize>,
    /// Power floor before the log.
    pub amin: f64,
    /// Lowest dB value kept after referencing to the utterance maximum.
    pub db_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            window: WindowKind::Hamming,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            fft_size: None,
            amin: 1e-10,
            db_floor: -80.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_len(sample_rate).next_power_of_two())
    }

    pub fn n_bins(&self, sample_rate: u32) -> usize {
        self.fft_len(sample_rate) / 2 + 1
    }

    pub fn fmax_hz(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), AudioError> {
        let nyquist = sample_rate as f64 / 2.0;
        let fmax = self.fmax_hz(sample_rate);
        let err = |m: String| Err(AudioError::Config(m));
        if self.n_mels < 2 {
            return err(format!("n_mels must be at least 2, got {}", self.n_mels));
        }
        if !(0.0 <= self.fmin && self.fmin < fmax) {
            return err(format!("need 0 <= fmin < fmax, got {} and {fmax}", self.fmin));
        }
        if fmax > nyquist {
            return err(format!("fmax {fmax} Hz exceeds Nyquist {nyquist} Hz"));
        }
        let win = self.window_len(sample_rate);
        if win < 2 || self.hop_len(sample_rate) == 0 {
            return err("window and hop must span at least 2 and 1 samples".into());
        }
        if self.fft_len(sample_rate) < win {
            return err(format!(
                "fft_size {} shorter than window {win}",
                self.fft_len(sample_rate)
            ));
        }
        if !(self.db_floor < 0.0) || !(self.amin > 0.0) {
            return err("db_floor must be negative and amin positive".into());
        }
        Ok(())
    }
}

/// `floor((len − window) / hop) + 1`, or zero when the signal is shorter
/// than one window.
pub fn n_frames(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

pub fn window(kind: WindowKind, n: usize) -> Vec<f64> {
    let (a, b) = match kind {
        WindowKind::Hamming => (0.54, 0.46),
        WindowKind::Hann => (0.5, 0.5),
    };
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| a - b * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided power spectrum of Hamming-windowed frames,
/// `[fft_size/2 + 1, n_frames]`.
pub fn stft_power(w: &Waveform, cfg: &SpectrogramConfig) -> Result<Tensor, AudioError> {
    cfg.validate(w.sample_rate)?;
    let win_len = cfg.window_len(w.sample_rate);
    let hop = cfg.hop_len(w.sample_rate);
    let nfft = cfg.fft_len(w.sample_rate);
    let frames = n_frames(w.len(), win_len, hop);
    if frames == 0 {
        return Err(AudioError::TooShort {
            got: w.len(),
            needed: win_len,
        });
    }
    let bins = nfft / 2 + 1;
    let win = window(cfg.window, win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = vec![0.0; bins * frames];
    for t in 0..frames {
        let frame = &w.samples[t * hop..t * hop + win_len];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win_len {
                Complex::new(frame[i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..bins {
            out[k * frames + t] = buf[k].norm_sqr();
        }
    }
    Tensor::new(vec![bins, frames], out).map_err(|e| AudioError::Config(e.to_string()))
}

/// HTK mel scale, `2595·log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centres evenly spaced in mel, sampled at the FFT
/// bin frequencies: `[n_mels, fft_size/2 + 1]`. Peaks are 1.
pub fn mel_filterbank(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Tensor, AudioError> {
    cfg.validate(sample_rate)?;
    let nfft = cfg.fft_len(sample_rate);
    let bins = nfft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax_hz(sample_rate)));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut out = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / nfft as f64;
            let up = (f - left) / (centre - left);
            let down = (right - f) / (right - centre);
            out[m * bins + k] = up.min(down).max(0.0);
        }
    }
    Tensor::new(vec![cfg.n_mels, bins], out).map_err(|e| AudioError::Config(e.to_string()))
}

/// Filter centre frequencies in Hz.
pub fn mel_centers(cfg: &SpectrogramConfig, sample_rate: u32) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax_hz(sample_rate)));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[n_mels, n_frames]` in dB relative to the utterance maximum.
    pub values: Tensor,
    pub config: SpectrogramConfig,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Log-Mel spectrogram: filterbank · power, `10·log10(max(x, amin))`,
/// shifted so the maximum is 0 dB and floored at `db_floor`. A signal with
/// no mel energy above `amin` maps to the floor everywhere.
pub fn mel_spectrogram(w: &Waveform, cfg: &SpectrogramConfig) -> Result<MelSpectrogram, AudioError> {
    let power = stft_power(w, cfg)?;
    let fb = mel_filterbank(cfg, w.sample_rate)?;
    let mel = fb
        .matmul(&power)
        .map_err(|e| AudioError::Config(e.to_string()))?;
    let db: Vec<f64> = mel
        .data()
        .iter()
        .map(|&p| 10.0 * p.max(cfg.amin).log10())
        .collect();
    let silent = mel.data().iter().all(|&p| p <= cfg.amin);
    let reference = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = db
        .iter()
        .map(|&d| {
            if silent {
                cfg.db_floor
            } else {
                (d - reference).max(cfg.db_floor)
            }
        })
        .collect();
    Ok(MelSpectrogram {
        values: Tensor::new(mel.shape().to_vec(), values)
            .map_err(|e| AudioError::Config(e.to_string()))?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, secs: f64, amp: f64) -> Waveform {
        let n = (sr as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    /// O(N²) DFT power of one windowed, zero-padded frame.
    fn naive_dft_power(frame: &[f64], nfft: usize) -> Vec<f64> {
        (0..nfft / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_at_16k_has_98_frames() {
        let cfg = SpectrogramConfig::default();
        assert_eq!(cfg.window_len(16000), 400);
        assert_eq!(cfg.hop_len(16000), 160);
        assert_eq!(cfg.fft_len(16000), 512);
        let p = stft_power(&sine(440.0, 16000, 1.0, 0.5), &cfg).unwrap();
        assert_eq!(p.shape(), &[257, 98]);
    }

    #[test]
    fn sine_peak_bin_matches_naive_dft() {
        let cfg = SpectrogramConfig::default();
        let w = sine(1000.0, 16000, 0.2, 0.8);
        let p = stft_power(&w, &cfg).unwrap();
        let win = window(WindowKind::Hamming, 400);
        let frames = p.shape()[1];
        for t in [0, frames / 2, frames - 1] {
            let frame: Vec<f64> = w.samples[t * 160..t * 160 + 400]
                .iter()
                .zip(&win)
                .map(|(a, b)| a * b)
                .collect();
            let oracle = naive_dft_power(&frame, 512);
            let col: Vec<f64> = (0..257).map(|k| p.at2(k, t)).collect();
            for (a, b) in col.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9 * oracle.iter().cloned().fold(0.0, f64::max));
            }
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&col), argmax(&oracle));
            assert_eq!(argmax(&col), (1000.0f64 * 512.0 / 16000.0).round() as usize);
        }
    }

    #[test]
    fn silence_gives_zero_power_and_floor_db() {
        let cfg = SpectrogramConfig::default();
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        assert!(stft_power(&w, &cfg).unwrap().data().iter().all(|&v| v == 0.0));
        let m = mel_spectrogram(&w, &cfg).unwrap();
        assert!(m.values.data().iter().all(|&v| v == -80.0));
    }

    #[test]
    fn short_signal_names_required_length() {
        let cfg = SpectrogramConfig::default();
        let w = Waveform::new(vec![0.1; 399], 16000).unwrap();
        match stft_power(&w, &cfg) {
            Err(AudioError::TooShort { got, needed }) => assert_eq!((got, needed), (399, 400)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mel_formula() {
        assert!((hz_to_mel(700.0) - 781.172_838_748_031_2).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        for f in [0.0, 123.0, 4000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn two_band_filterbank() {
        let cfg = SpectrogramConfig {
            n_mels: 2,
            ..Default::default()
        };
        let fb = mel_filterbank(&cfg, 16000).unwrap();
        assert_eq!(fb.shape(), &[2, 257]);
        let c = mel_centers(&cfg, 16000);
        assert!(c[0] < c[1] && c[1] < 8000.0);
        let peak = |m: usize| {
            (0..257)
                .max_by(|&a, &b| fb.at2(m, a).total_cmp(&fb.at2(m, b)))
                .unwrap()
        };
        assert!(peak(0) < peak(1));
    }

    #[test]
    fn fmax_above_nyquist_is_rejected() {
        let cfg = SpectrogramConfig {
            fmax: Some(9000.0),
            ..Default::default()
        };
        assert!(matches!(mel_filterbank(&cfg, 16000), Err(AudioError::Config(_))));
    }

    #[test]
    fn default_output_is_128_by_98() {
        let m = mel_spectrogram(&sine(1000.0, 16000, 1.0, 0.5), &SpectrogramConfig::default()).unwrap();
        assert_eq!((m.n_mels(), m.n_frames()), (128, 98));
        let max = m.values.data().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 0.0);
        assert!(m.values.data().iter().all(|&v| (-80.0..=0.0).contains(&v)));
    }
}
