use std::io::{Read, Write};
use std::path::Path;

use super::{AudioError, MelSpectrogram};
use crate::nn::Tensor;

/// Fixed-size model input, `[3, H, W]` with values in `[0, 1]`.
/// Row 0 holds the lowest mel band.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramImage {
    pub pixels: Tensor,
}

impl SpectrogramImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.pixels.data()[c * n..(c + 1) * n]
    }
}

/// Bilinear resampling with corner alignment; identity when sizes agree.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| {
        if n_out == 1 || n_in == 1 {
            0.0
        } else {
            o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = coord(oy, out_h, h);
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for ox in 0..out_w {
            let x = coord(ox, out_w, w);
            let x0 = (x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Maps `[db_floor, 0]` dB linearly onto `[0, 1]`, resizes to `h × w` and
/// replicates the grey level over three channels.
pub fn spectrogram_to_image(
    m: &MelSpectrogram,
    h: usize,
    w: usize,
) -> Result<SpectrogramImage, AudioError> {
    if m.values.is_empty() || h == 0 || w == 0 {
        return Err(AudioError::Empty);
    }
    let floor = m.config.db_floor;
    let (rows, cols) = (m.n_mels(), m.n_frames());
    let scaled: Vec<f64> = m
        .values
        .data()
        .iter()
        .map(|&d| ((d - floor) / -floor).clamp(0.0, 1.0))
        .collect();
    let grey = resize_bilinear(&scaled, rows, cols, h, w);
    let grey: Vec<f64> = grey.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let pixels = [grey.as_slice(), grey.as_slice(), grey.as_slice()].concat();
    Ok(SpectrogramImage {
        pixels: Tensor::new(vec![3, h, w], pixels).map_err(|e| AudioError::Config(e.to_string()))?,
    })
}

/// Writes `[n_mels, n_frames]` as `u32 n_mels, u32 n_frames` followed by
/// row-major little-endian `f64` values.
pub fn write_matrix<W: Write>(mut out: W, m: &Tensor) -> Result<(), AudioError> {
    let (r, c) = m.dims2().map_err(|e| AudioError::Config(e.to_string()))?;
    out.write_all(&(r as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<Tensor, AudioError> {
    let mut hdr = [0u8; 8];
    input.read_exact(&mut hdr)?;
    let r = u32::from_le_bytes(hdr[..4].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(hdr[4..].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; r * c * 8];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(vec![r, c], data).map_err(|e| AudioError::Config(e.to_string()))
}

/// Greyscale PNG with low frequencies at the bottom.
pub fn write_spectrogram_png(path: impl AsRef<Path>, img: &SpectrogramImage) -> Result<(), AudioError> {
    let (h, w) = (img.height(), img.width());
    let grey = img.channel(0);
    let mut buf = ::image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (grey[(h - 1 - y) * w + x] * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, ::image::Luma([v]));
        }
    }
    buf.save(path).map_err(|e| AudioError::Image(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SpectrogramConfig;

    fn mel(values: Vec<f64>, rows: usize, cols: usize) -> MelSpectrogram {
        MelSpectrogram {
            values: Tensor::new(vec![rows, cols], values).unwrap(),
            config: SpectrogramConfig::default(),
        }
    }

    #[test]
    fn floor_maps_to_black() {
        let img = spectrogram_to_image(&mel(vec![-80.0; 128 * 98], 128, 98), 224, 224).unwrap();
        assert_eq!(img.pixels.shape(), &[3, 224, 224]);
        assert!(img.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let n = 224;
        let values: Vec<f64> = (0..n * n).map(|i| -80.0 * ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let img = spectrogram_to_image(&mel(values.clone(), n, n), n, n).unwrap();
        for (p, d) in img.channel(0).iter().zip(&values) {
            assert!((p - (d + 80.0) / 80.0).abs() < 1e-12);
        }
        assert_eq!(img.channel(0), img.channel(2));
    }

    #[test]
    fn bilinear_midpoint() {
        let out = resize_bilinear(&[0.0, 1.0, 2.0, 3.0], 2, 2, 3, 3);
        assert_eq!(out[4], 1.5);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[8], 3.0);
    }

    #[test]
    fn matrix_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![-1.0, 0.0, 1.5, -80.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 8 + 6 * 8);
        assert_eq!(read_matrix(&buf[..]).unwrap(), t);
    }
}
