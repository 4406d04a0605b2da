//! Experiment driver: configs, feature extraction, training, evaluation
//! protocols and the synthetic desk corpus.

mod config;
mod desk;
mod features;
mod protocols;
mod train;

use thiserror::Error;

use crate::audio::AudioError;
use crate::augment::AugmentError;
use crate::corpus::CorpusError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::speaker::SpeakerError;

pub use config::{Balancing, CrossCorpusConfig, SpeakerSource, TrainConfig};
pub use desk::{gen_desk_corpus, DeskCorpusSpec};
pub use features::{project_speaker, resolve_audio, synthetic_spec, FeatureBuilder, Features};
pub use protocols::{run_cross_corpus, run_loso, write_cross_corpus_table, CrossCorpusRow, LosoFold, LosoSummary};
pub use train::{
    evaluate, regenerate_report, train, write_outcome, BatchLogEntry, ExperimentResult, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("sample `{id}`: {reason}")]
    Sample { id: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Speaker(#[from] SpeakerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
