use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SpeakerEmbedding, SpeakerError};
use crate::audio::{mel_spectrogram, SpectrogramConfig, Waveform};

pub const TOY_EMBEDDING_DIM: usize = 1024;
const PROJECTION_SEED: u64 = 0x5eed_5bea_4e72;

/// Stand-in for a pretrained speaker network: per-band mean, standard
/// deviation and mean absolute frame delta of the log-Mel spectrogram,
/// mapped through a fixed Gaussian projection.
#[derive(Clone, Debug)]
pub struct ToySpeakerEncoder {
    config: SpectrogramConfig,
    out_dim: usize,
    /// `[out_dim, 3 * n_mels]`, row-major.
    projection: Vec<f64>,
}

impl ToySpeakerEncoder {
    pub fn new(config: SpectrogramConfig, out_dim: usize, seed: u64) -> Self {
        let n_in = 3 * config.n_mels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n_in as f64).sqrt();
        let projection = (0..out_dim * n_in)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect::<Vec<f64>>();
        ToySpeakerEncoder {
            config,
            out_dim,
            projection,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn features(&self, w: &Waveform) -> Result<Vec<f64>, SpeakerError> {
        let mel = mel_spectrogram(w, &self.config)?;
        let (bands, frames) = (mel.n_mels(), mel.n_frames());
        let v = mel.values.data();
        let mut f = Vec::with_capacity(3 * bands);
        for b in 0..bands {
            let row = &v[b * frames..(b + 1) * frames];
            let mean = row.iter().sum::<f64>() / frames as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / frames as f64;
            let delta = if frames > 1 {
                row.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (frames - 1) as f64
            } else {
                0.0
            };
            f.extend_from_slice(&[mean, var.sqrt(), delta]);
        }
        Ok(f)
    }

    pub fn embed(&self, id: &str, w: &Waveform) -> Result<SpeakerEmbedding, SpeakerError> {
        let f = self.features(w)?;
        let vector = self
            .projection
            .chunks_exact(f.len())
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
            .collect();
        Ok(SpeakerEmbedding {
            utterance_id: id.to_string(),
            vector,
        })
    }
}

impl Default for ToySpeakerEncoder {
    fn default() -> Self {
        ToySpeakerEncoder::new(SpectrogramConfig::default(), TOY_EMBEDDING_DIM, PROJECTION_SEED)
    }
}

/// One-off embedding with the default encoder. Build a `ToySpeakerEncoder`
/// once when embedding many utterances.
pub fn toy_speaker_encoder(id: &str, w: &Waveform) -> Result<SpeakerEmbedding, SpeakerError> {
    ToySpeakerEncoder::default().embed(id, w)
}
