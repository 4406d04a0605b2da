//! Confusion matrices, accuracy, unweighted average recall and macro F1.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label {label} at position {index} is outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("metric undefined on an empty confusion matrix")]
    Empty,
    #[error("cannot merge {0}-class and {1}-class matrices")]
    Incompatible(usize, usize),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn confusion_matrix(
    truth: &[usize],
    pred: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (index, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        for label in [t, p] {
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange {
                    index,
                    label,
                    classes: num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..num_classes).map(|c| c.to_string()).collect(),
    })
}

impl ConfusionMatrix {
    pub fn with_names(mut self, names: &[String]) -> Self {
        if names.len() == self.num_classes() {
            self.class_names = names.to_vec();
        }
        self
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Row sum: samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.support(c) - self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum::<u64>() - self.counts[c][c]
    }

    /// Classes with no true samples.
    pub fn zero_support(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.support(c) == 0).collect()
    }

    /// Elementwise sum, for combining evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.num_classes() != self.num_classes() {
            return Err(MetricsError::Incompatible(self.num_classes(), other.num_classes()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let trace: u64 = (0..cm.num_classes()).map(|c| cm.counts[c][c]).sum();
    Ok(trace as f64 / total as f64)
}

/// Mean per-class recall over classes with at least one true sample.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let recalls: Vec<f64> = (0..cm.num_classes())
        .filter(|&c| cm.support(c) > 0)
        .map(|c| cm.true_positives(c) as f64 / cm.support(c) as f64)
        .collect();
    if recalls.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Per-class `tp / (tp + (fp + fn) / 2)`; a class with nothing to score gets 0.
pub fn f1_scores(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|c| {
            let tp = cm.true_positives(c) as f64;
            let denom = tp + 0.5 * (cm.false_positives(c) + cm.false_negatives(c)) as f64;
            if denom == 0.0 {
                0.0
            } else {
                tp / denom
            }
        })
        .collect()
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let f = f1_scores(cm);
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub uar: f64,
    pub macro_f1: f64,
    /// Class names left out of the UAR mean and scored F1 = 0.
    pub zero_support: Vec<String>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn from_predictions(
        predictions: Vec<Prediction>,
        class_names: &[String],
    ) -> Result<Self, MetricsError> {
        let truth: Vec<usize> = predictions.iter().map(|p| p.truth).collect();
        let pred: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
        let cm = confusion_matrix(&truth, &pred, class_names.len())?.with_names(class_names);
        Ok(EvalReport {
            accuracy: accuracy(&cm)?,
            uar: uar(&cm)?,
            macro_f1: macro_f1(&cm)?,
            zero_support: cm.zero_support().iter().map(|&c| class_names[c].clone()).collect(),
            confusion: cm,
            predictions,
        })
    }

    /// Writes `<stem>_metrics.csv`, `<stem>_confusion.csv` and
    /// `<stem>_predictions.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(), MetricsError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut m = std::fs::File::create(dir.join(format!("{stem}_metrics.csv")))?;
        writeln!(m, "metric,value")?;
        writeln!(m, "accuracy,{}", self.accuracy)?;
        writeln!(m, "uar,{}", self.uar)?;
        writeln!(m, "macro_f1,{}", self.macro_f1)?;
        writeln!(m, "zero_support,{}", self.zero_support.join(";"))?;

        let mut c = std::fs::File::create(dir.join(format!("{stem}_confusion.csv")))?;
        writeln!(c, "true\\pred,{}", self.confusion.class_names.join(","))?;
        for (name, row) in self.confusion.class_names.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(c, "{name},{}", cells.join(","))?;
        }

        let mut p = std::fs::File::create(dir.join(format!("{stem}_predictions.csv")))?;
        writeln!(p, "id,true,predicted")?;
        for x in &self.predictions {
            writeln!(p, "{},{},{}", x.id, x.truth, x.predicted)?;
        }
        Ok(())
    }
}

/// Row-normalised heatmap, true classes top to bottom, predictions left to
/// right; darker means more mass.
pub fn write_confusion_png(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<(), MetricsError> {
    const CELL: u32 = 32;
    let n = cm.num_classes().max(1) as u32;
    let img = image::GrayImage::from_fn(n * CELL, n * CELL, |x, y| {
        let (r, c) = ((y / CELL) as usize, (x / CELL) as usize);
        if r >= cm.num_classes() {
            return image::Luma([255]);
        }
        let support = cm.support(r);
        let frac = if support == 0 {
            0.0
        } else {
            cm.counts[r][c] as f64 / support as f64
        };
        let edge = x % CELL == 0 || y % CELL == 0;
        image::Luma([if edge { 128 } else { (255.0 * (1.0 - frac)).round() as u8 }])
    });
    img.save(path).map_err(|e| MetricsError::Image(e.to_string()))
}
