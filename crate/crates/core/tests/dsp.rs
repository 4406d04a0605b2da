mod common;

use common::*;
use proptest::prelude::*;
use sercct::audio::{mel_centers, mel_filterbank, mel_spectrogram, n_frames, spectrogram_to_image, SpectrogramConfig, Waveform};

#[test]
fn frame_counts_and_mel_peak() {
    dsp_checks(500, 99).unwrap();
}

#[test]
fn tones_peak_in_nearest_band_across_the_range() {
    let cfg = SpectrogramConfig::default();
    let centres = sercct::audio::mel_centers(&cfg, 16_000);
    for f in [300.0, 1000.0, 2500.0, 5000.0] {
        let w = tone(f, 0.3, 16_000);
        let peak = naive_dft_peak_hz(&w.samples[..400], 16_000, cfg.fft_len(16_000));
        let mel = mel_spectrogram(&w, &cfg).unwrap();
        let energy: Vec<f64> = (0..128).map(|m| mel.values.row(m).iter().sum()).collect();
        let loudest = (0..128).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        let d = (centres[loudest] - peak).abs();
        let best = centres.iter().map(|c| (c - peak).abs()).fold(f64::INFINITY, f64::min);
        assert!(d <= best + 1e-9, "{f} Hz: band {loudest}");
    }
}

#[test]
fn filterbank_shape_and_peaks() {
    let cfg = SpectrogramConfig::default();
    let fb = mel_filterbank(&cfg, 16_000).unwrap();
    assert_eq!(fb.shape(), [128, 257]);
    assert!(fb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let centres = mel_centers(&cfg, 16_000);
    assert!(centres.windows(2).all(|w| w[0] < w[1]));
    let peaks: Vec<usize> = fb
        .data()
        .chunks(257)
        .map(|row| (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b }))
        .collect();
    assert!(peaks.windows(2).all(|w| w[0] <= w[1]), "{peaks:?}");
    assert!(peaks.windows(2).any(|w| w[0] == w[1]));
}

#[test]
fn silence_maps_to_the_floor() {
    let cfg = SpectrogramConfig::default();
    let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
    let mel = mel_spectrogram(&w, &cfg).unwrap();
    assert!(mel.values.data().iter().all(|&v| v == cfg.db_floor));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_formula(len in 0usize..50_000, win in 1usize..2048, hop in 1usize..1024) {
        let expected = if len < win { 0 } else { (len - win) / hop + 1 };
        prop_assert_eq!(n_frames(len, win, hop), expected);
    }

    #[test]
    fn spectrogram_is_bounded_and_image_in_unit_range(seed in 0u64..1000, len in 400usize..6000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap();
        let cfg = SpectrogramConfig::default();
        let mel = mel_spectrogram(&w, &cfg).unwrap();
        let max = mel.values.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max.abs() < 1e-9);
        prop_assert!(mel.values.data().iter().all(|&v| v >= cfg.db_floor));
        let img = spectrogram_to_image(&mel, 16, 16).unwrap();
        prop_assert_eq!(img.pixels.shape(), &[3, 16, 16]);
        prop_assert!(img.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
