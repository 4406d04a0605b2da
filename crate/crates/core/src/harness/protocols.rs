use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, write_outcome, Balancing, CrossCorpusConfig, HarnessError, TrainConfig};
use crate::corpus::{split_cross_corpus, split_loso, Sample};
use crate::model::FusionVariant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCorpusRow {
    pub test_corpus: String,
    pub variant: FusionVariant,
    pub balancing: Balancing,
    pub accuracy: f64,
    pub uar: f64,
    pub macro_f1: f64,
}

/// Rotates over `cc.held_out`, training every variant under every balancing
/// mode. Each run is written to `out_dir/<corpus>/<variant>_<balancing>/` and
/// the summary table to `out_dir/cross_corpus.csv`.
pub fn run_cross_corpus(
    samples: &[Sample],
    base_dir: &Path,
    cc: &CrossCorpusConfig,
    base: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<CrossCorpusRow>, HarnessError> {
    if cc.held_out.is_empty() || cc.variants.is_empty() || cc.balancing.is_empty() {
        return Err(HarnessError::Config("cross-corpus needs held-out corpora, variants and balancing modes".into()));
    }
    let all: BTreeSet<&str> = samples.iter().map(|s| s.corpus_id.as_str()).collect();
    let mut rows = Vec::new();
    for test in &cc.held_out {
        let mut val: Vec<&str> = cc.extra_val.iter().map(String::as_str).collect();
        if cc.val_from_held_out {
            val.extend(cc.held_out.iter().filter(|c| *c != test).map(String::as_str));
        }
        let train_c: Vec<&str> = if cc.train.is_empty() {
            all.iter().copied().filter(|c| c != test && !val.contains(c)).collect()
        } else {
            cc.train.iter().map(String::as_str).collect()
        };
        let plan = split_cross_corpus(samples, &train_c, &val, test)?;
        for &variant in &cc.variants {
            for &balancing in &cc.balancing {
                let mut cfg = base.clone();
                cfg.model.fusion = variant;
                cfg.balancing = balancing;
                let out = train(samples, base_dir, &plan, &cfg)?;
                if let Some(dir) = out_dir {
                    write_outcome(&dir.join(test).join(format!("{}_{}", variant.name(), balancing.short())), &out)?;
                }
                let r = out
                    .result
                    .test_report
                    .ok_or_else(|| HarnessError::Config(format!("corpus `{test}` has no usable test samples")))?;
                rows.push(CrossCorpusRow {
                    test_corpus: test.clone(),
                    variant,
                    balancing,
                    accuracy: r.accuracy,
                    uar: r.uar,
                    macro_f1: r.macro_f1,
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        write_cross_corpus_table(&dir.join("cross_corpus.csv"), &rows, &cc.balancing)?;
    }
    Ok(rows)
}

/// One line per (test corpus, variant) with a metric column per balancing
/// mode, e.g. `accuracy_us,accuracy_aug`.
pub fn write_cross_corpus_table(path: &Path, rows: &[CrossCorpusRow], modes: &[Balancing]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["test_corpus".to_string(), "variant".to_string()];
    for metric in ["accuracy", "uar", "macro_f1"] {
        header.extend(modes.iter().map(|m| format!("{metric}_{}", m.short())));
    }
    writeln!(f, "{}", header.join(","))?;
    let mut keys: Vec<(&str, FusionVariant)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.test_corpus.as_str(), r.variant)) {
            keys.push((r.test_corpus.as_str(), r.variant));
        }
    }
    for (corpus, variant) in keys {
        let mut line = vec![corpus.to_string(), variant.name().to_string()];
        let metrics: [fn(&CrossCorpusRow) -> f64; 3] = [|r| r.accuracy, |r| r.uar, |r| r.macro_f1];
        for metric in metrics {
            for m in modes {
                let v = rows
                    .iter()
                    .find(|r| r.test_corpus == corpus && r.variant == variant && r.balancing == *m)
                    .map_or(String::new(), |r| format!("{:.6}", metric(r)));
                line.push(v);
            }
        }
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub speaker: String,
    pub accuracy: f64,
    pub uar: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoSummary {
    pub folds: Vec<LosoFold>,
    /// Unweighted means over folds.
    pub accuracy: f64,
    pub uar: f64,
    pub macro_f1: f64,
}

/// Leave-one-speaker-out over every speaker in `samples`.
pub fn run_loso(samples: &[Sample], base_dir: &Path, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<LosoSummary, HarnessError> {
    let mut folds = Vec::new();
    for plan in split_loso(samples)? {
        let out = train(samples, base_dir, &plan, cfg)?;
        if let Some(dir) = out_dir {
            write_outcome(&dir.join(&plan.held_out), &out)?;
        }
        let r = out.result.test_report.ok_or_else(|| {
            HarnessError::Config(format!("speaker `{}` has no usable test samples", plan.held_out))
        })?;
        folds.push(LosoFold {
            speaker: plan.held_out.clone(),
            accuracy: r.accuracy,
            uar: r.uar,
            macro_f1: r.macro_f1,
        });
    }
    let n = folds.len() as f64;
    let mean = |f: fn(&LosoFold) -> f64| folds.iter().map(f).sum::<f64>() / n;
    let summary = LosoSummary {
        accuracy: mean(|f| f.accuracy),
        uar: mean(|f| f.uar),
        macro_f1: mean(|f| f.macro_f1),
        folds,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("loso.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}
