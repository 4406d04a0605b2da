//! Speaker embeddings: a toy encoder, a binary store, PCA and classical MDS.

mod encoder;
mod mds;
mod pca;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{toy_speaker_encoder, ToySpeakerEncoder, TOY_EMBEDDING_DIM};
pub use mds::{mds_embed, silhouette, write_mds_csv, write_scatter_png, MdsPoint};
pub use pca::{pca_fit, PcaModel};
pub use store::{load_store, save_store, EmbeddingStore};

#[derive(Debug, Error)]
pub enum SpeakerError {
    #[error("requested {k} components but at most {max} are available")]
    TooManyComponents { k: usize, max: usize },
    #[error("all input vectors are identical")]
    Degenerate,
    #[error("expected dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("need at least {needed} vectors, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("distance matrix is not {0}")]
    BadDistances(&'static str),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("embedding store: {0}")]
    Store(String),
    #[error("no embedding for utterance `{0}`")]
    Missing(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub utterance_id: String,
    pub vector: Vec<f64>,
}
