//! Checks shared by the topic suites and the acceptance runner. Each check
//! returns a short detail string on success and a reason on failure.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sercct::audio::{mel_centers, mel_spectrogram, stft_power, SpectrogramConfig, Waveform};
use sercct::corpus::{
    apply_label_scheme, balance_augment, balance_undersample, class_counts, split_cross_corpus, split_loso,
    Emotion, LabelScheme, LabeledSample, Protocol, Sample, SplitPlan,
};
use sercct::harness::{gen_desk_corpus, train, write_outcome, DeskCorpusSpec, TrainConfig};
use sercct::metrics::{accuracy, confusion_matrix, f1_scores, macro_f1, uar, ConfusionMatrix};
use sercct::model::{CctConfig, CctModel, FusionVariant, ModelInput, PositionalEmbedding};
use sercct::nn::{
    finite_difference_check, AttentionConfig, EncoderLayer, GradCheckOptions, Graph, LayerNorm, Linear, Mlp,
    MultiHeadAttention, NnError, ParamStore, Tensor, Var,
};
use sercct::speaker::{mds_embed, pca_fit};

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks stay outside the probe step.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    rand_tensor(shape, rng).map(|v| if v >= 0.0 { 0.1 + v } else { v - 0.1 })
}

// ---------------------------------------------------------------- gradients

pub const GRAD_TOL: f64 = 1e-4;
const DIM: usize = 16;

fn grad_opts() -> GradCheckOptions {
    GradCheckOptions {
        h: 1e-5,
        tol: GRAD_TOL,
        max_probes_per_block: Some(32),
        ..GradCheckOptions::default()
    }
}

type Builder = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var, NnError>>;

/// Registers `x` as a parameter so its gradient is checked as well, then
/// reduces the layer output with a fixed random projection.
fn layer_case(name: &str, mut store: ParamStore, x: Tensor, out_shape: &[usize], f: Builder, seed: u64) -> (String, f64) {
    store.insert("input", x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = rand_tensor(out_shape, &mut rng);
    let report = finite_difference_check(
        |p| {
            let mut g = Graph::new();
            let y = f(&mut g, p)?;
            let root = g.weighted_sum(y, &probe)?;
            Ok((g, root))
        },
        &store,
        grad_opts(),
    )
    .unwrap();
    (name.to_string(), report.max_rel_error())
}

/// Every layer and primitive the model uses, at width 16.
pub fn layer_gradients() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 5;
    let mut out = Vec::new();
    fn input(g: &mut Graph, p: &ParamStore) -> Var {
        g.param(p, p.id("input").unwrap())
    }

    let mut s = ParamStore::default();
    let lin = Linear::new(&mut s, "lin", DIM, DIM, &mut rng);
    out.push(layer_case("linear", s, rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        lin.forward(g, p, x)
    }), 1));

    let mut s = ParamStore::default();
    let ln = LayerNorm::new(&mut s, "ln", DIM);
    // Non-trivial affine parameters so their gradients are exercised.
    for id in s.ids().collect::<Vec<_>>() {
        *s.get_mut(id) = rand_tensor(&[DIM], &mut rng);
    }
    out.push(layer_case("layer_norm", s, rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        ln.forward(g, p, x)
    }), 2));

    let mut s = ParamStore::default();
    let mlp = Mlp::new(&mut s, "mlp", DIM, 2 * DIM, DIM, &mut rng);
    out.push(layer_case("mlp_gelu", s, rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        mlp.forward(g, p, x)
    }), 3));

    let mut s = ParamStore::default();
    let mha = MultiHeadAttention::new(&mut s, "mha", AttentionConfig::new(DIM, 2).unwrap(), &mut rng);
    out.push(layer_case("multi_head_attention", s, rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        Ok(mha.forward(g, p, x)?.0)
    }), 4));

    let mut s = ParamStore::default();
    let enc = EncoderLayer::new(&mut s, "enc", AttentionConfig::new(DIM, 2).unwrap(), 2, &mut rng);
    out.push(layer_case("encoder_layer", s, rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        Ok(enc.forward(g, p, x)?.0)
    }), 5));

    let mut s = ParamStore::default();
    let w = s.insert("conv.weight", rand_tensor(&[4, 3, 3, 3], &mut rng));
    let b = s.insert("conv.bias", rand_tensor(&[4], &mut rng));
    out.push(layer_case("conv2d", s, rand_tensor(&[3, 6, 6], &mut rng), &[4, 6, 6], Box::new(move |g, p| {
        let x = input(g, p);
        let (w, b) = (g.param(p, w), g.param(p, b));
        g.conv2d(x, w, b, 1, 1)
    }), 6));

    out.push(layer_case("relu", ParamStore::default(), off_zero(&[n, DIM], &mut rng), &[n, DIM], Box::new(|g, p| {
        let x = input(g, p);
        Ok(g.relu(x))
    }), 7));

    out.push(layer_case("max_pool2d", ParamStore::default(), rand_tensor(&[2, 7, 7], &mut rng), &[2, 4, 4], Box::new(|g, p| {
        let x = input(g, p);
        g.max_pool2d(x, 3, 2, 1)
    }), 8));

    out.push(layer_case("softmax_rows", ParamStore::default(), rand_tensor(&[n, DIM], &mut rng), &[n, DIM], Box::new(|g, p| {
        let x = input(g, p);
        g.softmax_rows(x)
    }), 9));

    let targets = [0usize, 3, 1, 2, 3];
    out.push(layer_case("cross_entropy", ParamStore::default(), rand_tensor(&[n, 4], &mut rng), &[1], Box::new(move |g, p| {
        let x = input(g, p);
        g.cross_entropy(x, &targets)
    }), 10));

    let mut s = ParamStore::default();
    let pool = Linear::new(&mut s, "pool", DIM, 1, &mut rng);
    out.push(layer_case("sequence_pool", s, rand_tensor(&[n, DIM], &mut rng), &[1, DIM], Box::new(move |g, p| {
        let x = input(g, p);
        let a = pool.forward(g, p, x)?;
        let a = g.transpose(a)?;
        let a = g.softmax_rows(a)?;
        g.matmul(a, x)
    }), 11));

    let mut s = ParamStore::default();
    let bias = s.insert("bias", rand_tensor(&[DIM], &mut rng));
    out.push(layer_case("reshape_slice_concat", s, rand_tensor(&[n, DIM], &mut rng), &[2 * n, DIM / 2], Box::new(move |g, p| {
        let x = input(g, p);
        let b = g.param(p, bias);
        let y = g.add_row(x, b)?;
        let y = g.scale(y, 0.7);
        let t = g.transpose(y)?;
        let t = g.reshape(t, &[n, DIM])?;
        let left = g.slice_cols(t, 0, DIM / 2)?;
        let right = g.slice_cols(t, DIM / 2, DIM / 2)?;
        let stacked = g.concat_rows(&[right, left])?;
        let wide = g.concat_cols(&[stacked, stacked])?;
        let head = g.slice_rows(wide, 0, 2 * n)?;
        let sq = g.matmul_nt(head, head)?;
        let sq = g.slice_cols(sq, 0, DIM / 2)?;
        g.add(sq, stacked)
    }), 12));
    out
}

pub fn tiny_model_config(fusion: FusionVariant) -> CctConfig {
    CctConfig {
        image_height: 8,
        image_width: 8,
        conv_layers: 1,
        conv_hidden: 4,
        encoder_layers: 1,
        model_dim: DIM,
        num_heads: 2,
        fusion,
        ..CctConfig::default()
    }
}

/// Full forward pass plus cross-entropy for each fusion variant.
pub fn variant_gradients() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    FusionVariant::ALL
        .iter()
        .map(|&v| {
            let cfg = tiny_model_config(v);
            let model = CctModel::new(cfg.clone(), 5).unwrap();
            let images: Vec<Tensor> = (0..2).map(|_| rand_tensor(&[3, 8, 8], &mut rng).map(|x| 0.5 + 0.5 * x)).collect();
            let spk: Vec<Vec<f64>> = (0..2).map(|_| (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let batch: Vec<ModelInput> = images
                .iter()
                .zip(&spk)
                .map(|(image, s)| ModelInput {
                    image,
                    speaker: v.uses_speaker().then_some(s.as_slice()),
                })
                .collect();
            let report = finite_difference_check(
                |p| {
                    let (g, loss, _) = model.loss_graph(p, &batch, &[1, 3]).map_err(|e| NnError::Shape(e.to_string()))?;
                    Ok((g, loss))
                },
                &model.params,
                grad_opts(),
            )
            .unwrap();
            (format!("forward_{}", v.name()), report.max_rel_error())
        })
        .collect()
}

pub fn gradient_suite() -> Check {
    let all: Vec<(String, f64)> = layer_gradients().into_iter().chain(variant_gradients()).collect();
    let (worst_name, worst) = all
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let failed: Vec<String> = all
        .iter()
        .filter(|(_, e)| !(*e < GRAD_TOL))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure(failed.is_empty(), || format!("over tolerance: {}", failed.join(", ")))?;
    Ok(format!("{} cases, worst {worst_name} {worst:.2e}", all.len()))
}

// ---------------------------------------------------------------- metrics

/// Metrics recomputed straight from label pairs, no confusion matrix.
pub fn brute_force(truth: &[usize], pred: &[usize], c: usize) -> (f64, f64, f64) {
    let n = truth.len() as f64;
    let acc = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / n;
    let (mut recalls, mut f1s) = (Vec::new(), Vec::new());
    for k in 0..c {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p == k).count() as f64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != k && p == k).count() as f64;
        let fnn = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p != k).count() as f64;
        if tp + fnn > 0.0 {
            recalls.push(tp / (tp + fnn));
        }
        let denom = tp + 0.5 * (fp + fnn);
        f1s.push(if denom > 0.0 { tp / denom } else { 0.0 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (acc, mean(&recalls), mean(&f1s))
}

pub fn metrics_oracle(sets: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = rng.gen_range(1..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let cm = confusion_matrix(&truth, &pred, 4).unwrap();
        let (a, u, f) = brute_force(&truth, &pred, 4);
        for (x, y) in [(accuracy(&cm).unwrap(), a), (uar(&cm).unwrap(), u), (macro_f1(&cm).unwrap(), f)] {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.2e}"))?;

    // Binary example: 8 of 10 positives and 3 of 5 negatives recalled.
    let cm = ConfusionMatrix {
        counts: vec![vec![8, 2], vec![2, 3]],
        class_names: vec!["pos".into(), "neg".into()],
    };
    let u = uar(&cm).unwrap();
    ensure(u == 0.8 * 0.5 + 0.6 * 0.5 && (u - 0.70).abs() < 1e-15, || format!("binary UAR {u}"))?;

    let cm = ConfusionMatrix {
        counts: vec![vec![1, 1], vec![0, 1]],
        class_names: vec!["a".into(), "b".into()],
    };
    let f1 = f1_scores(&cm);
    ensure(f1 == vec![2.0 / 3.0, 2.0 / 3.0], || format!("per-class F1 {f1:?}"))?;
    ensure(macro_f1(&cm).unwrap() == 2.0 / 3.0, || "macro F1 of [[1,1],[0,1]]".into())?;
    ensure(accuracy(&cm).unwrap() == 2.0 / 3.0, || "accuracy of [[1,1],[0,1]]".into())?;
    Ok(format!("{sets} random sets, max deviation {worst:.1e}, binary UAR {u}"))
}

// ---------------------------------------------------------------- dsp

pub fn tone(freq: f64, seconds: f64, sr: u32) -> Waveform {
    let n = (seconds * sr as f64) as usize;
    Waveform::new(
        (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect(),
        sr,
    )
    .unwrap()
}

/// Frequency of the largest bin of a directly summed DFT of one frame.
pub fn naive_dft_peak_hz(x: &[f64], sr: u32, nfft: usize) -> f64 {
    let mut best = (0, 0.0);
    for k in 0..=nfft / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / nfft as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (k, p);
        }
    }
    best.0 as f64 * sr as f64 / nfft as f64
}

pub fn dsp_checks(lengths: usize, seed: u64) -> Check {
    let cfg = SpectrogramConfig::default();
    let sr = 16_000;
    let (win, hop) = (cfg.window_len(sr), cfg.hop_len(sr));
    ensure((win, hop) == (400, 160), || format!("window {win}, hop {hop}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..lengths {
        let len = rng.gen_range(win..12_000);
        let w = Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), sr).unwrap();
        let frames = stft_power(&w, &cfg).unwrap().shape()[1];
        let expected = (len - win) / hop + 1;
        ensure(frames == expected, || format!("length {len}: {frames} frames, expected {expected}"))?;
    }

    let w = tone(1000.0, 0.5, sr);
    let mel = mel_spectrogram(&w, &cfg).unwrap();
    ensure(mel.n_mels() == 128, || format!("{} bands", mel.n_mels()))?;
    let frame: Vec<f64> = w.samples[..win].to_vec();
    let peak = naive_dft_peak_hz(&frame, sr, cfg.fft_len(sr));
    let centres = mel_centers(&cfg, sr);
    let nearest = (0..centres.len())
        .min_by(|&a, &b| (centres[a] - peak).abs().total_cmp(&(centres[b] - peak).abs()))
        .unwrap();
    let band_energy: Vec<f64> = (0..mel.n_mels())
        .map(|m| mel.values.row(m).iter().sum::<f64>())
        .collect();
    let loudest = (0..band_energy.len())
        .max_by(|&a, &b| band_energy[a].total_cmp(&band_energy[b]))
        .unwrap();
    ensure(loudest == nearest, || format!("loudest band {loudest}, nearest to {peak} Hz is {nearest}"))?;
    Ok(format!("{lengths} lengths, 1 kHz peak in band {loudest} of 128"))
}

// ---------------------------------------------------------------- balancing

pub fn emodb_like(counts: &[usize]) -> Vec<LabeledSample> {
    let emotions = [Emotion::Anger, Emotion::Happiness, Emotion::Sadness, Emotion::Neutral];
    let mut out = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            out.push(LabeledSample {
                sample: Sample {
                    id: format!("{}{i:03}", emotions[c].code()),
                    audio_path: format!("wav/{}{i:03}.wav", emotions[c].code()),
                    emotion: emotions[c],
                    speaker_id: format!("s{}", i % 10),
                    corpus_id: "emodb".into(),
                    augmented_from: None,
                },
                class: c,
            });
        }
    }
    out
}

pub fn balancing_checks() -> Check {
    let counts = [127, 71, 62, 79];
    let samples = emodb_like(&counts);
    let under = balance_undersample(&samples, 4, 7).unwrap();
    ensure(class_counts(&under, 4) == vec![62; 4], || format!("undersampled {:?}", class_counts(&under, 4)))?;
    ensure(under.len() == 248, || format!("undersampled total {}", under.len()))?;
    let originals: BTreeSet<&str> = samples.iter().map(|s| s.sample.id.as_str()).collect();
    ensure(under.iter().all(|s| originals.contains(s.sample.id.as_str())), || "undersampling invented samples".into())?;

    let mut calls = 0;
    let aug = balance_augment(&samples, 4, 7, |_, _| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    ensure(class_counts(&aug, 4) == vec![127; 4], || format!("augmented {:?}", class_counts(&aug, 4)))?;
    let synthetic: Vec<&LabeledSample> = aug.iter().filter(|s| s.sample.augmented_from.is_some()).collect();
    let expected: usize = counts.iter().map(|&n| 127 - n).sum();
    ensure(expected == 169 && synthetic.len() == 169 && calls == 169, || {
        format!("{} synthetic, {calls} augment calls", synthetic.len())
    })?;
    ensure(aug[..samples.len()] == samples[..], || "originals not retained in order".into())?;
    let by_id: HashMap<&str, &LabeledSample> = samples.iter().map(|s| (s.sample.id.as_str(), s)).collect();
    for s in &synthetic {
        let src = by_id[s.sample.augmented_from.as_deref().unwrap()];
        ensure(src.class == s.class, || format!("{} changes class", s.sample.id))?;
    }
    Ok(format!("undersample 4x62 = {}, augment 4x127 with {} synthetic", under.len(), synthetic.len()))
}

// ---------------------------------------------------------------- protocols

/// Random corpora, speakers and emotions, with some augmented copies that
/// share their source's speaker and corpus.
pub fn random_manifest(rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let n_corpora = rng.gen_range(3..6);
    let mut out: Vec<Sample> = Vec::new();
    for c in 0..n_corpora {
        for s in 0..rng.gen_range(2..5) {
            for u in 0..rng.gen_range(2..8) {
                let id = format!("c{c}s{s}u{u}");
                out.push(Sample {
                    audio_path: format!("{id}.wav"),
                    id,
                    emotion: *Emotion::ALL.choose(rng).unwrap(),
                    speaker_id: format!("c{c}_spk{s}"),
                    corpus_id: format!("corpus{c}"),
                    augmented_from: None,
                });
            }
        }
    }
    let n = out.len();
    for k in 0..rng.gen_range(0..n / 2) {
        let src = out[rng.gen_range(0..n)].clone();
        out.push(Sample {
            id: format!("{}.aug{k}", src.id),
            audio_path: format!("{}.aug{k}.wav", src.id),
            augmented_from: Some(src.id.clone()),
            ..src
        });
    }
    out.shuffle(rng);
    out
}

/// Leakage audit written against the raw manifest, independent of the
/// split code's own validation.
pub fn cross_corpus_violations(samples: &[Sample], plan: &SplitPlan, test: &str) -> usize {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let test_ids: BTreeSet<&str> = plan.test.iter().map(String::as_str).collect();
    let mut v = 0;
    for id in plan.train.iter().chain(&plan.val) {
        let s = by_id[id.as_str()];
        if s.corpus_id == test || test_ids.contains(id.as_str()) {
            v += 1;
        }
        if s.augmented_from.as_deref().is_some_and(|src| by_id[src].corpus_id == test) {
            v += 1;
        }
    }
    v += plan.test.iter().filter(|id| by_id[id.as_str()].corpus_id != test).count();
    let expected = samples.iter().filter(|s| s.corpus_id == test).count();
    v + expected.abs_diff(plan.test.len())
}

pub fn loso_violations(samples: &[Sample], plans: &[SplitPlan]) -> usize {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let speakers: BTreeSet<&str> = samples.iter().map(|s| s.speaker_id.as_str()).collect();
    let mut v = speakers.len().abs_diff(plans.len());
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for p in plans {
        for id in &p.test {
            *seen.entry(id.as_str()).or_default() += 1;
            if by_id[id.as_str()].speaker_id != p.held_out {
                v += 1;
            }
        }
        for id in p.train.iter().chain(&p.val) {
            if by_id[id.as_str()].speaker_id == p.held_out || p.test.contains(id) {
                v += 1;
            }
        }
    }
    // Test sets must partition the manifest.
    v += samples.iter().filter(|s| seen.get(s.id.as_str()) != Some(&1)).count();
    v
}

pub fn protocol_checks(manifests: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut violations, mut splits) = (0, 0);
    for _ in 0..manifests {
        let samples = random_manifest(&mut rng);
        let corpora: Vec<String> = samples.iter().map(|s| s.corpus_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let test = corpora.choose(&mut rng).unwrap().clone();
        let rest: Vec<&str> = corpora.iter().map(String::as_str).filter(|c| *c != test).collect();
        let (val, train) = rest.split_at(1);
        let plan = split_cross_corpus(&samples, train, val, &test).map_err(|e| e.to_string())?;
        violations += cross_corpus_violations(&samples, &plan, &test);
        let plans = split_loso(&samples).map_err(|e| e.to_string())?;
        violations += loso_violations(&samples, &plans);
        splits += 1 + plans.len();
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("{manifests} manifests, {splits} splits, 0 violations"))
}

// ---------------------------------------------------------------- architecture

pub fn architecture_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for v in FusionVariant::ALL {
        let cfg = tiny_model_config(v);
        let m = CctModel::new(cfg.clone(), 2).unwrap();
        let want = cfg.n_tokens() + usize::from(matches!(v, FusionVariant::EndToEnd | FusionVariant::EndToEndToken));
        ensure(cfg.encoder_len() == want, || format!("{v}: encoder length {}", cfg.encoder_len()))?;
        let img = rand_tensor(&[3, 8, 8], &mut rng);
        let spk: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = m
            .forward(&[ModelInput {
                image: &img,
                speaker: v.uses_speaker().then_some(spk.as_slice()),
            }])
            .unwrap();
        ensure(out.encoder_len == want, || format!("{v}: forward reports {}", out.encoder_len))?;
    }
    for v in [FusionVariant::EndToEnd, FusionVariant::EndToEndToken] {
        let cfg = CctConfig {
            positional_embedding: PositionalEmbedding::None,
            ..tiny_model_config(v)
        };
        let m = CctModel::new(cfg.clone(), 4).unwrap();
        let img = rand_tensor(&[3, 8, 8], &mut rng);
        let spk: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tokens = m.tokenize(&img).unwrap();
        let base = m.forward_tokens(&tokens, Some(&spk)).unwrap();
        let n = cfg.n_tokens();
        for trial in 0..5 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| tokens.row(i).to_vec()).collect();
            let shuffled = Tensor::from_rows(&rows).unwrap();
            let logits = m.forward_tokens(&shuffled, Some(&spk)).unwrap();
            let d = logits.max_abs_diff(&base);
            worst = worst.max(d);
            ensure(d < 1e-7, || format!("{v} permutation {trial}: logits move by {d:.2e}"))?;
        }
    }
    Ok(format!("encoder lengths ok, permutation drift {worst:.1e}"))
}

// ---------------------------------------------------------------- pca / mds

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn geometry_checks(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ortho = 0.0f64;
    for (n, d, k) in [(40, 12, 5), (10, 64, 8)] {
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pca = pca_fit(&data, k).map_err(|e| e.to_string())?;
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((dot(&pca.components[i], &pca.components[j]) - want).abs());
            }
        }
    }
    ensure(ortho < 1e-8, || format!("orthonormality error {ortho:.2e}"))?;

    let (n, d, k) = (30, 20, 4);
    let basis: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let centre: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let data: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let coef: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (0..d).map(|j| centre[j] + (0..k).map(|i| coef[i] * basis[i][j]).sum::<f64>()).collect()
        })
        .collect();
    let pca = pca_fit(&data, k).map_err(|e| e.to_string())?;
    let mut recon = 0.0f64;
    for x in &data {
        let back = pca.reconstruct(&pca.project(x).unwrap()).unwrap();
        recon = recon.max(dist(&back, x));
    }
    ensure(recon < 1e-8, || format!("rank-{k} reconstruction error {recon:.2e}"))?;

    let pts: Vec<[f64; 2]> = (0..25).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
    let dm: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| dist(a, b)).collect()).collect();
    let y = mds_embed(&dm, 2).map_err(|e| e.to_string())?;
    let mut derr = 0.0f64;
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            derr = derr.max((dist(&y[i], &y[j]) - dm[i][j]).abs());
        }
    }
    ensure(derr < 1e-6, || format!("MDS distance error {derr:.2e}"))?;
    Ok(format!("orthonormality {ortho:.1e}, reconstruction {recon:.1e}, MDS {derr:.1e}"))
}

// ---------------------------------------------------------------- training

pub fn desk_corpus(dir: &Path) -> Vec<Sample> {
    gen_desk_corpus(dir, &DeskCorpusSpec::default()).unwrap()
}

pub fn train_on_everything(samples: &[Sample]) -> SplitPlan {
    SplitPlan {
        protocol: Protocol::Loso,
        held_out: String::new(),
        train: samples.iter().map(|s| s.id.clone()).collect(),
        val: Vec::new(),
        test: Vec::new(),
    }
}

pub fn labelled(samples: &[Sample]) -> usize {
    apply_label_scheme(samples, LabelScheme::FourClass).samples.len()
}

/// Trains with the given seed into `dir` and returns every output file's bytes.
pub fn run_files(samples: &[Sample], base: &Path, plan: &SplitPlan, cfg: &TrainConfig, dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let out = train(samples, base, plan, cfg).unwrap();
    write_outcome(dir, &out).unwrap();
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}
