use serde::{Deserialize, Serialize};

use super::{Emotion, Sample};

/// Maps canonical emotions onto training classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Anger, Happiness, Sadness, Neutral; everything else is excluded.
    FourClass,
    /// Negative, Positive, Neutral; nothing is excluded.
    ThreeClass,
}

impl LabelScheme {
    pub fn class_of(self, e: Emotion) -> Option<usize> {
        use Emotion::*;
        match self {
            LabelScheme::FourClass => match e {
                Anger => Some(0),
                Happiness => Some(1),
                Sadness => Some(2),
                Neutral => Some(3),
                _ => None,
            },
            LabelScheme::ThreeClass => Some(match e {
                Anger | Boredom | Disgust | Fear | Sadness => 0,
                Excitement | Happiness | Surprise => 1,
                Neutral => 2,
            }),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            LabelScheme::FourClass => &["anger", "happiness", "sadness", "neutral"],
            LabelScheme::ThreeClass => &["negative", "positive", "neutral"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::FourClass => 4,
            LabelScheme::ThreeClass => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample: Sample,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub samples: Vec<LabeledSample>,
    pub class_names: Vec<String>,
    pub dropped: usize,
}

pub fn apply_label_scheme(samples: &[Sample], scheme: LabelScheme) -> LabeledSet {
    let kept: Vec<LabeledSample> = samples
        .iter()
        .filter_map(|s| {
            scheme.class_of(s.emotion).map(|class| LabeledSample {
                sample: s.clone(),
                class,
            })
        })
        .collect();
    LabeledSet {
        dropped: samples.len() - kept.len(),
        samples: kept,
        class_names: scheme.class_names(),
    }
}
