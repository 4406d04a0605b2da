use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, LabeledSample};
use crate::augment::derive_seed;

pub fn class_counts(samples: &[LabeledSample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in samples {
        if s.class < num_classes {
            counts[s.class] += 1;
        }
    }
    counts
}

/// Id of the `k`-th synthetic copy made from `id`.
pub fn synthetic_id(id: &str, k: usize) -> String {
    format!("{id}.aug{k}")
}

fn synthetic_path(path: &str, k: usize) -> String {
    match path.rfind('.') {
        Some(dot) if !path[dot..].contains('/') => {
            format!("{}.aug{k}{}", &path[..dot], &path[dot..])
        }
        _ => format!("{path}.aug{k}"),
    }
}

fn members(samples: &[LabeledSample], num_classes: usize) -> Result<Vec<Vec<usize>>, CorpusError> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        if s.class >= num_classes {
            return Err(CorpusError::EmptyClass(format!(
                "{} (sample `{}` out of range)",
                s.class, s.sample.id
            )));
        }
        by_class[s.class].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(CorpusError::EmptyClass(c.to_string()));
    }
    Ok(by_class)
}

fn class_rng(seed: u64, tag: &str, class: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{tag}/{class}")))
}

/// Randomly keeps `min_c n_c` samples of every class. Survivors keep their
/// original relative order.
pub fn balance_undersample(
    samples: &[LabeledSample],
    num_classes: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>, CorpusError> {
    let by_class = members(samples, num_classes)?;
    let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut keep = Vec::with_capacity(target * num_classes);
    for (c, idx) in by_class.iter().enumerate() {
        let mut idx = idx.clone();
        idx.shuffle(&mut class_rng(seed, "undersample", c));
        keep.extend_from_slice(&idx[..target]);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

/// Tops every class up to `max_c n_c` with synthetic copies. Sources are
/// visited round-robin in a seeded order, so no source is reused `k + 1`
/// times before every source has been used `k` times.
///
/// `augment(source, synthetic)` materialises each copy; the output holds the
/// originals first, then the synthetic records.
pub fn balance_augment<F>(
    samples: &[LabeledSample],
    num_classes: usize,
    seed: u64,
    mut augment: F,
) -> Result<Vec<LabeledSample>, CorpusError>
where
    F: FnMut(&LabeledSample, &LabeledSample) -> Result<(), String>,
{
    let by_class = members(samples, num_classes)?;
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = samples.to_vec();
    for (c, idx) in by_class.iter().enumerate() {
        let mut order = idx.clone();
        order.shuffle(&mut class_rng(seed, "augment", c));
        for j in 0..target - idx.len() {
            let src = &samples[order[j % order.len()]];
            let k = j / order.len();
            let mut synth = src.clone();
            synth.sample.id = synthetic_id(&src.sample.id, k);
            synth.sample.audio_path = synthetic_path(&src.sample.audio_path, k);
            synth.sample.augmented_from = Some(src.sample.id.clone());
            augment(src, &synth).map_err(|reason| CorpusError::Augment {
                id: src.sample.id.clone(),
                reason,
            })?;
            out.push(synth);
        }
    }
    Ok(out)
}
