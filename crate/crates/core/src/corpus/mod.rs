//! Utterance manifests, label schemes, class balancing and protocol splits.

mod balance;
mod labels;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use balance::{balance_augment, balance_undersample, class_counts, synthetic_id};
pub use labels::{apply_label_scheme, LabelScheme, LabeledSample, LabeledSet};
pub use split::{split_cross_corpus, split_loso, Protocol, SplitPlan};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: missing column `{column}`")]
    MissingColumn { line: u64, column: String },
    #[error("manifest line {line}: unknown emotion label `{label}`")]
    UnknownLabel { line: u64, label: String },
    #[error("manifest line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("sample `{id}` is augmented from unknown id `{source_id}`")]
    DanglingSource { id: String, source_id: String },
    #[error("manifest line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("corpus sets overlap on `{0}`")]
    Overlap(String),
    #[error("corpus `{0}` has no samples in the manifest")]
    UnknownCorpus(String),
    #[error("leave-one-speaker-out needs at least two speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("augmenting sample `{id}` failed: {reason}")]
    Augment { id: String, reason: String },
    #[error("split plan violates {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical emotion labels across the supported corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    Anger,
    Boredom,
    Disgust,
    Excitement,
    Fear,
    Happiness,
    Neutral,
    Sadness,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; 9] = [
        Emotion::Anger,
        Emotion::Boredom,
        Emotion::Disgust,
        Emotion::Excitement,
        Emotion::Fear,
        Emotion::Happiness,
        Emotion::Neutral,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    /// Short code: A, B, D, E, F, H, N, S, Sr.
    pub fn code(self) -> &'static str {
        match self {
            Emotion::Anger => "A",
            Emotion::Boredom => "B",
            Emotion::Disgust => "D",
            Emotion::Excitement => "E",
            Emotion::Fear => "F",
            Emotion::Happiness => "H",
            Emotion::Neutral => "N",
            Emotion::Sadness => "S",
            Emotion::Surprise => "Sr",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Boredom => "boredom",
            Emotion::Disgust => "disgust",
            Emotion::Excitement => "excitement",
            Emotion::Fear => "fear",
            Emotion::Happiness => "happiness",
            Emotion::Neutral => "neutral",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    /// Accepts full names (any case) or the short codes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Emotion::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(t) || e.code() == t)
            .ok_or_else(|| t.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub audio_path: String,
    pub emotion: Emotion,
    pub speaker_id: String,
    pub corpus_id: String,
    pub augmented_from: Option<String>,
}

const REQUIRED: [&str; 5] = ["id", "audio_path", "emotion", "speaker_id", "corpus_id"];

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>, CorpusError> {
    parse_manifest(std::fs::File::open(path)?)
}

/// Parses a manifest CSV with header `id,audio_path,emotion,speaker_id,corpus_id`
/// and an optional `augmented_from` column.
pub fn parse_manifest<R: Read>(input: R) -> Result<Vec<Sample>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| CorpusError::MissingColumn {
            line: 1,
            column: name.into(),
        })?;
    }
    let aug_col = col("augmented_from");

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CorpusError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| {
            rec.get(i)
                .filter(|v| !v.is_empty())
                .map(str::to_string)
                .ok_or_else(|| CorpusError::MissingColumn {
                    line,
                    column: name.into(),
                })
        };
        let id = field(idx[0], "id")?;
        let label = field(idx[2], "emotion")?;
        let emotion = label
            .parse::<Emotion>()
            .map_err(|label| CorpusError::UnknownLabel { line, label })?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        samples.push(Sample {
            audio_path: field(idx[1], "audio_path")?,
            emotion,
            speaker_id: field(idx[3], "speaker_id")?,
            corpus_id: field(idx[4], "corpus_id")?,
            augmented_from: aug_col
                .and_then(|c| rec.get(c))
                .filter(|v| !v.is_empty())
                .map(str::to_string),
            id,
        });
    }
    for s in &samples {
        if let Some(src) = &s.augmented_from {
            if !seen.contains(src) {
                return Err(CorpusError::DanglingSource {
                    id: s.id.clone(),
                    source_id: src.clone(),
                });
            }
        }
    }
    Ok(samples)
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(REQUIRED.iter().chain(["augmented_from"].iter()))
        .map_err(csv_io)?;
    for s in samples {
        w.write_record([
            s.id.as_str(),
            s.audio_path.as_str(),
            s.emotion.name(),
            s.speaker_id.as_str(),
            s.corpus_id.as_str(),
            s.augmented_from.as_deref().unwrap_or(""),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "id,audio_path,emotion,speaker_id,corpus_id
a1,a1.wav,anger,s1,emodb
a2,a2.wav,N,s2,emodb
a3,a3.wav,Sr,s1,ravdess
";

    #[test]
    fn parses_well_formed_rows() {
        let s = parse_manifest(GOOD.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].emotion, Emotion::Neutral);
        assert_eq!(s[2].emotion, Emotion::Surprise);
        assert_eq!(s[2].corpus_id, "ravdess");
    }

    #[test]
    fn unknown_label_names_the_row() {
        let text = "id,audio_path,emotion,speaker_id,corpus_id\nx,x.wav,anger,s,c\ny,y.wav,Joy,s,c\n";
        match parse_manifest(text.as_bytes()) {
            Err(CorpusError::UnknownLabel { line, label }) => {
                assert_eq!(line, 3);
                assert_eq!(label, "Joy");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_missing_columns() {
        let dup = "id,audio_path,emotion,speaker_id,corpus_id\nx,x.wav,anger,s,c\nx,y.wav,fear,s,c\n";
        assert!(matches!(
            parse_manifest(dup.as_bytes()),
            Err(CorpusError::DuplicateId { line: 3, .. })
        ));
        let missing = "id,audio_path,emotion,speaker_id\nx,x.wav,anger,s\n";
        assert!(matches!(
            parse_manifest(missing.as_bytes()),
            Err(CorpusError::MissingColumn { column, .. }) if column == "corpus_id"
        ));
    }

    #[test]
    fn augmented_from_must_resolve() {
        let text = "id,audio_path,emotion,speaker_id,corpus_id,augmented_from\nx,x.wav,anger,s,c,\nx.aug0,x.aug0.wav,anger,s,c,zz\n";
        assert!(matches!(
            parse_manifest(text.as_bytes()),
            Err(CorpusError::DanglingSource { .. })
        ));
    }

    #[test]
    fn write_then_parse_round_trip() {
        let s = parse_manifest(GOOD.as_bytes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&p, &s).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), s);
    }
}
