//! Compact convolutional transformer with optional speaker-embedding fusion.

mod cct;
mod checkpoint;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{window_output_len, NnError};

pub use cct::{
    forward_cct, forward_downstream, forward_end_to_end, forward_speaker_token, CctModel,
    ModelInput, ModelOutput,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} fusion needs a speaker embedding")]
    MissingSpeaker(FusionVariant),
    #[error("fusion variant `none` takes no speaker embedding")]
    UnexpectedSpeaker,
    #[error("operation requires fusion {expected}, model has {actual}")]
    WrongVariant { expected: FusionVariant, actual: FusionVariant },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// Plain CCT, no speaker input.
    None,
    /// Speaker vector fused with the pooled CCT feature by a 2-token attention head.
    Downstream,
    /// Speaker vector appended as an extra encoder token; pooling over all tokens.
    EndToEnd,
    /// Speaker vector appended as an extra token; classifier reads only its output.
    EndToEndToken,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [
        FusionVariant::None,
        FusionVariant::Downstream,
        FusionVariant::EndToEnd,
        FusionVariant::EndToEndToken,
    ];

    pub fn uses_speaker(self) -> bool {
        self != FusionVariant::None
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::None => "none",
            FusionVariant::Downstream => "downstream",
            FusionVariant::EndToEnd => "end_to_end",
            FusionVariant::EndToEndToken => "end_to_end_token",
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown fusion variant `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEmbedding {
    Learned,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CctConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    /// Channels of every conv stage but the last, which emits `model_dim`.
    pub conv_hidden: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub encoder_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub positional_embedding: PositionalEmbedding,
    pub fusion: FusionVariant,
}

impl Default for CctConfig {
    /// Desk scale.
    fn default() -> Self {
        CctConfig {
            image_height: 32,
            image_width: 32,
            in_channels: 3,
            conv_layers: 2,
            conv_kernel: 3,
            conv_hidden: 32,
            pool_kernel: 3,
            pool_stride: 2,
            encoder_layers: 2,
            model_dim: 64,
            num_heads: 2,
            mlp_ratio: 2,
            num_classes: 4,
            positional_embedding: PositionalEmbedding::Learned,
            fusion: FusionVariant::None,
        }
    }
}

impl CctConfig {
    /// 14 encoder layers, 7×7 kernels, two conv stages, width 384, 224×224 input.
    pub fn full_scale(num_classes: usize, fusion: FusionVariant) -> Self {
        CctConfig {
            image_height: 224,
            image_width: 224,
            conv_kernel: 7,
            conv_hidden: 64,
            encoder_layers: 14,
            model_dim: 384,
            num_heads: 6,
            num_classes,
            fusion,
            ..CctConfig::default()
        }
    }

    pub fn speaker_dim(&self) -> usize {
        self.model_dim
    }

    /// Feature-map side after one conv (stride 1, same padding) and pool stage.
    fn stage_out(&self, n: usize) -> Option<usize> {
        let conv = window_output_len(n, self.conv_kernel, 1, self.conv_kernel / 2)?;
        window_output_len(conv, self.pool_kernel, self.pool_stride, self.pool_kernel / 2)
    }

    /// Spatial size `(H_f, W_f)` of the tokenizer output.
    pub fn feature_map(&self) -> Option<(usize, usize)> {
        let (mut h, mut w) = (self.image_height, self.image_width);
        for _ in 0..self.conv_layers {
            h = self.stage_out(h)?;
            w = self.stage_out(w)?;
        }
        Some((h, w))
    }

    pub fn n_tokens(&self) -> usize {
        self.feature_map().map_or(0, |(h, w)| h * w)
    }

    /// Encoder sequence length: image tokens, plus the speaker token for the
    /// end-to-end variants.
    pub fn encoder_len(&self) -> usize {
        self.n_tokens()
            + matches!(self.fusion, FusionVariant::EndToEnd | FusionVariant::EndToEndToken) as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("in_channels", self.in_channels),
            ("conv_layers", self.conv_layers),
            ("conv_kernel", self.conv_kernel),
            ("conv_hidden", self.conv_hidden),
            ("pool_kernel", self.pool_kernel),
            ("pool_stride", self.pool_stride),
            ("encoder_layers", self.encoder_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("need at least two classes".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(ModelError::Config("conv_kernel must be odd".into()));
        }
        if self.feature_map().is_none() {
            return Err(ModelError::Config(format!(
                "{}x{} input is too small for {} conv stages",
                self.image_height, self.image_width, self.conv_layers
            )));
        }
        Ok(())
    }
}
