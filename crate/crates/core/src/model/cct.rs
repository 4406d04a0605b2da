use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CctConfig, FusionVariant, ModelError, PositionalEmbedding};
use crate::nn::{
    AttentionConfig, EncoderLayer, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamId,
    ParamStore, Tensor, Var,
};

/// One utterance: a `[C, H, W]` image and, for fusion variants, its speaker
/// vector of length `model_dim`.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub image: &'a Tensor,
    pub speaker: Option<&'a [f64]>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[batch, num_classes]`
    pub logits: Tensor,
    pub encoder_len: usize,
    /// Sequence-pooling weights per sample; empty for the speaker-token variant.
    pub pool_weights: Vec<Vec<f64>>,
    /// Per sample, per head `[2, 2]` attention of the downstream fusion block.
    pub fusion_attention: Vec<Vec<Tensor>>,
}

impl ModelOutput {
    pub fn predictions(&self) -> Vec<usize> {
        let c = self.logits.shape()[1];
        self.logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

struct Diag {
    pool: Option<Var>,
    fusion: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct CctModel {
    pub config: CctConfig,
    pub params: ParamStore,
    conv: Vec<(ParamId, ParamId)>,
    pos: Option<ParamId>,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    pool: Option<Linear>,
    classifier: Option<Linear>,
    fusion_attn: Option<MultiHeadAttention>,
    fusion_head: Option<Mlp>,
}

impl CctModel {
    /// Randomly initialised model. Parameter creation order, and hence every
    /// initial value, is a function of `(config, seed)` only.
    pub fn new(config: CctConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let c = &config;
        let d = c.model_dim;
        let k = c.conv_kernel;

        let mut conv = Vec::with_capacity(c.conv_layers);
        let mut c_in = c.in_channels;
        for i in 0..c.conv_layers {
            let c_out = if i + 1 == c.conv_layers { d } else { c.conv_hidden };
            let w = store.insert_glorot(
                format!("tokenizer.conv{i}.weight"),
                &[c_out, c_in, k, k],
                c_in * k * k,
                c_out * k * k,
                &mut rng,
            );
            let b = store.insert(format!("tokenizer.conv{i}.bias"), Tensor::zeros(&[c_out]));
            conv.push((w, b));
            c_in = c_out;
        }

        let pos = match c.positional_embedding {
            PositionalEmbedding::Learned => {
                let n = c.encoder_len();
                Some(store.insert_glorot("pos_embedding", &[n, d], n, d, &mut rng))
            }
            PositionalEmbedding::None => None,
        };
        let attn = AttentionConfig::new(d, c.num_heads)?;
        let layers = (0..c.encoder_layers)
            .map(|i| EncoderLayer::new(&mut store, &format!("encoder.{i}"), attn, c.mlp_ratio, &mut rng))
            .collect();
        let norm = LayerNorm::new(&mut store, "encoder.norm", d);

        let (mut pool, mut classifier, mut fusion_attn, mut fusion_head) = (None, None, None, None);
        match c.fusion {
            FusionVariant::None | FusionVariant::EndToEnd => {
                pool = Some(Linear::new(&mut store, "pool", d, 1, &mut rng));
                classifier = Some(Linear::new(&mut store, "classifier", d, c.num_classes, &mut rng));
            }
            FusionVariant::EndToEndToken => {
                classifier = Some(Linear::new(&mut store, "classifier", d, c.num_classes, &mut rng));
            }
            FusionVariant::Downstream => {
                pool = Some(Linear::new(&mut store, "pool", d, 1, &mut rng));
                fusion_attn = Some(MultiHeadAttention::new(&mut store, "fusion.attn", attn, &mut rng));
                fusion_head = Some(Mlp::new(&mut store, "fusion.head", 2 * d, d, c.num_classes, &mut rng));
            }
        }

        Ok(CctModel {
            config,
            params: store,
            conv,
            pos,
            layers,
            norm,
            pool,
            classifier,
            fusion_attn,
            fusion_head,
        })
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let c = &self.config;
        let want = [c.in_channels, c.image_height, c.image_width];
        if image.shape() != want {
            return Err(ModelError::Shape(format!(
                "image {:?}, model expects {want:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    fn check_speaker(&self, spk: Option<&[f64]>) -> Result<(), ModelError> {
        match (self.config.fusion.uses_speaker(), spk) {
            (false, Some(_)) => Err(ModelError::UnexpectedSpeaker),
            (true, None) => Err(ModelError::MissingSpeaker(self.config.fusion)),
            (true, Some(v)) if v.len() != self.config.speaker_dim() => Err(ModelError::Shape(format!(
                "speaker vector has {} entries, model_dim is {}",
                v.len(),
                self.config.speaker_dim()
            ))),
            _ => Ok(()),
        }
    }

    /// Conv → ReLU → max-pool stages, flattened to `[H_f·W_f, model_dim]`.
    fn tokens_graph(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var, ModelError> {
        let c = &self.config;
        let mut x = image;
        for &(w, b) in &self.conv {
            let w = g.param(store, w);
            let b = g.param(store, b);
            x = g.conv2d(x, w, b, 1, c.conv_kernel / 2)?;
            x = g.relu(x);
            x = g.max_pool2d(x, c.pool_kernel, c.pool_stride, c.pool_kernel / 2)?;
        }
        let n = c.n_tokens();
        let flat = g.reshape(x, &[c.model_dim, n])?;
        Ok(g.transpose(flat)?)
    }

    /// Encoder and head for one sample, starting from its image tokens.
    fn head_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: Var,
        speaker: Option<&[f64]>,
    ) -> Result<(Var, Diag), ModelError> {
        let d = self.config.model_dim;
        let spk = speaker
            .map(|v| Tensor::new(vec![1, d], v.to_vec()))
            .transpose()?
            .map(|t| g.input(t));
        let fusion = self.config.fusion;
        let mut x = match (fusion, spk) {
            (FusionVariant::EndToEnd | FusionVariant::EndToEndToken, Some(s)) => g.concat_rows(&[tokens, s])?,
            _ => tokens,
        };
        if let Some(p) = self.pos {
            let p = g.param(store, p);
            x = g.add(x, p)?;
        }
        for layer in &self.layers {
            x = layer.forward(g, store, x)?.0;
        }
        x = self.norm.forward(g, store, x)?;
        let mut diag = Diag {
            pool: None,
            fusion: Vec::new(),
        };

        let logits = match fusion {
            FusionVariant::EndToEndToken => {
                let n = g.value(x).shape()[0];
                let last = g.slice_rows(x, n - 1, 1)?;
                self.classifier.as_ref().expect("token classifier").forward(g, store, last)?
            }
            _ => {
                let (pooled, w) = self.sequence_pool(g, store, x)?;
                diag.pool = Some(w);
                match fusion {
                    FusionVariant::Downstream => {
                        let s = spk.ok_or(ModelError::MissingSpeaker(fusion))?;
                        let pair = g.concat_rows(&[pooled, s])?;
                        let (mixed, heads) = self.fusion_attn.as_ref().expect("fusion attention").forward(g, store, pair)?;
                        diag.fusion = heads;
                        let u = g.slice_rows(mixed, 0, 1)?;
                        let v = g.slice_rows(mixed, 1, 1)?;
                        let both = g.concat_cols(&[u, v])?;
                        self.fusion_head.as_ref().expect("fusion head").forward(g, store, both)?
                    }
                    _ => self.classifier.as_ref().expect("classifier").forward(g, store, pooled)?,
                }
            }
        };
        Ok((logits, diag))
    }

    /// Attention-weighted average of the rows of `x: [n, d]`; returns the
    /// pooled `[1, d]` row and the `[1, n]` weights.
    fn sequence_pool(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var), ModelError> {
        let scores = self.pool.as_ref().expect("pool projection").forward(g, store, x)?;
        let scores = g.transpose(scores)?;
        let w = g.softmax_rows(scores)?;
        Ok((g.matmul(w, x)?, w))
    }

    /// Records the batch on `g` using `store` and returns `[batch, classes]`
    /// logits. Used by training and gradient checks.
    pub fn logits_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[ModelInput],
    ) -> Result<Var, ModelError> {
        Ok(self.batch_graph(g, store, batch)?.0)
    }

    fn batch_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[ModelInput],
    ) -> Result<(Var, Vec<Diag>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Shape("empty batch".into()));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut diags = Vec::with_capacity(batch.len());
        for x in batch {
            self.check_image(x.image)?;
            self.check_speaker(x.speaker)?;
            let img = g.input(x.image.clone());
            let tokens = self.tokens_graph(g, store, img)?;
            let (logits, diag) = self.head_graph(g, store, tokens, x.speaker)?;
            rows.push(logits);
            diags.push(diag);
        }
        let logits = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        Ok((logits, diags))
    }

    /// Mean cross-entropy graph for a labelled batch.
    pub fn loss_graph(
        &self,
        store: &ParamStore,
        batch: &[ModelInput],
        targets: &[usize],
    ) -> Result<(Graph, Var, Var), ModelError> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, store, batch)?;
        let loss = g.cross_entropy(logits, targets)?;
        Ok((g, loss, logits))
    }

    pub fn forward(&self, batch: &[ModelInput]) -> Result<ModelOutput, ModelError> {
        let mut g = Graph::new();
        let (logits, diags) = self.batch_graph(&mut g, &self.params, batch)?;
        let out = ModelOutput {
            logits: g.value(logits).clone(),
            encoder_len: self.config.encoder_len(),
            pool_weights: diags
                .iter()
                .filter_map(|d| d.pool.map(|p| g.value(p).data().to_vec()))
                .collect(),
            fusion_attention: diags
                .iter()
                .map(|d| d.fusion.iter().map(|&v| g.value(v).clone()).collect())
                .collect(),
        };
        if !out.logits.is_finite() {
            return Err(ModelError::Nn(crate::nn::NnError::NonFinite("logits")));
        }
        Ok(out)
    }

    /// The conv tokenizer alone: `[n_tokens, model_dim]`.
    pub fn tokenize(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let img = g.input(image.clone());
        let t = self.tokens_graph(&mut g, &self.params, img)?;
        Ok(g.value(t).clone())
    }

    /// Logits `[1, classes]` from precomputed image tokens, bypassing the
    /// tokenizer.
    pub fn forward_tokens(&self, tokens: &Tensor, speaker: Option<&[f64]>) -> Result<Tensor, ModelError> {
        let c = &self.config;
        if tokens.shape() != [c.n_tokens(), c.model_dim] {
            return Err(ModelError::Shape(format!(
                "tokens {:?}, expected [{}, {}]",
                tokens.shape(),
                c.n_tokens(),
                c.model_dim
            )));
        }
        self.check_speaker(speaker)?;
        let mut g = Graph::new();
        let t = g.input(tokens.clone());
        let (logits, _) = self.head_graph(&mut g, &self.params, t, speaker)?;
        Ok(g.value(logits).clone())
    }
}

fn expect_variant(m: &CctModel, v: FusionVariant) -> Result<(), ModelError> {
    if m.config.fusion != v {
        return Err(ModelError::WrongVariant {
            expected: v,
            actual: m.config.fusion,
        });
    }
    Ok(())
}

fn with_speakers<'a>(images: &'a [Tensor], spk: &'a [Vec<f64>]) -> Result<Vec<ModelInput<'a>>, ModelError> {
    if images.len() != spk.len() {
        return Err(ModelError::Shape(format!(
            "{} images but {} speaker vectors",
            images.len(),
            spk.len()
        )));
    }
    Ok(images
        .iter()
        .zip(spk)
        .map(|(image, s)| ModelInput {
            image,
            speaker: Some(s),
        })
        .collect())
}

pub fn forward_cct(m: &CctModel, images: &[Tensor]) -> Result<ModelOutput, ModelError> {
    expect_variant(m, FusionVariant::None)?;
    let batch: Vec<ModelInput> = images
        .iter()
        .map(|image| ModelInput { image, speaker: None })
        .collect();
    m.forward(&batch)
}

pub fn forward_downstream(m: &CctModel, images: &[Tensor], spk: &[Vec<f64>]) -> Result<ModelOutput, ModelError> {
    expect_variant(m, FusionVariant::Downstream)?;
    m.forward(&with_speakers(images, spk)?)
}

pub fn forward_end_to_end(m: &CctModel, images: &[Tensor], spk: &[Vec<f64>]) -> Result<ModelOutput, ModelError> {
    expect_variant(m, FusionVariant::EndToEnd)?;
    m.forward(&with_speakers(images, spk)?)
}

pub fn forward_speaker_token(m: &CctModel, images: &[Tensor], spk: &[Vec<f64>]) -> Result<ModelOutput, ModelError> {
    expect_variant(m, FusionVariant::EndToEndToken)?;
    m.forward(&with_speakers(images, spk)?)
}
