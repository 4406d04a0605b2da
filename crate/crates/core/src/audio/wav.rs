use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

/// Reads a PCM WAV file, averaging channels and scaling integer samples to
/// `[-1, 1]`. Accepts 8/16/24/32-bit integer and 32-bit float data.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(AudioError::NotFound(shown));
    }
    let reader = WavReader::open(path).map_err(|e| classify(e, &shown))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::Malformed {
            path: shown,
            reason: "zero channels".into(),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
        }
        (fmt, bits) => {
            return Err(AudioError::Unsupported {
                path: shown,
                reason: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    }
    .map_err(|e| classify(e, &shown))?;

    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit mono PCM, clamping to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let shown = path.as_ref().display().to_string();
    let mut writer = WavWriter::create(path, spec).map_err(|e| classify(e, &shown))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| classify(e, &shown))?;
    }
    writer.finalize().map_err(|e| classify(e, &shown))
}

fn classify(e: hound::Error, path: &str) -> AudioError {
    match e {
        // hound reports short reads as `Other("Failed to read enough bytes.")`.
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                ErrorKind::UnexpectedEof | ErrorKind::InvalidData | ErrorKind::Other
            ) =>
        {
            AudioError::Malformed {
                path: path.into(),
                reason: io.to_string(),
            }
        }
        hound::Error::IoError(io) if io.kind() == ErrorKind::NotFound => {
            AudioError::NotFound(path.into())
        }
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(reason) => AudioError::Malformed {
            path: path.into(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => AudioError::Unsupported {
            path: path.into(),
            reason: "codec not supported".into(),
        },
        other => AudioError::Malformed {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}
