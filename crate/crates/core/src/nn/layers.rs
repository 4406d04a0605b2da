use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.insert_glorot(format!("{name}.weight"), &[d_in, d_out], d_in, d_out, rng);
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0)),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Linear → GELU → Linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, store, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize) -> Result<Self, NnError> {
        let cfg = Self {
            model_dim,
            num_heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.model_dim == 0 || self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(NnError::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Multi-head self-attention with learned Q/K/V/output projections and
/// `1/sqrt(head_dim)` scaling.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.model_dim;
        Self {
            cfg,
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
        }
    }

    /// Returns the projected output and the per-head attention matrices.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Vec<Var>), NnError> {
        let (_, d) = g.value(x).dims2()?;
        if d != self.cfg.model_dim {
            return Err(NnError::Shape(format!(
                "attention expects width {}, got {d}",
                self.cfg.model_dim
            )));
        }
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.num_heads);
        let mut weights = Vec::with_capacity(self.cfg.num_heads);
        for h in 0..self.cfg.num_heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            heads.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        Ok((self.out.forward(g, store, merged)?, weights))
    }
}

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: AttentionConfig,
        mlp_ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.model_dim;
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, d * mlp_ratio, d, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Vec<Var>), NnError> {
        let h = self.norm1.forward(g, store, x)?;
        let (a, weights) = self.attn.forward(g, store, h)?;
        let x1 = g.add(x, a)?;
        let h = self.norm2.forward(g, store, x1)?;
        let m = self.mlp.forward(g, store, h)?;
        Ok((g.add(x1, m)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Tensor,
    /// One `[n_tokens, n_tokens]` row-stochastic matrix per head.
    pub weights: Vec<Tensor>,
}

/// Evaluates self-attention on a token matrix `[n_tokens, model_dim]`.
pub fn multi_head_self_attention(
    x: &Tensor,
    layer: &MultiHeadAttention,
    store: &ParamStore,
) -> Result<AttentionOutput, NnError> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (out, weights) = layer.forward(&mut g, store, xv)?;
    Ok(AttentionOutput {
        output: g.value(out).clone(),
        weights: weights.iter().map(|&w| g.value(w).clone()).collect(),
    })
}

pub fn transformer_encoder_layer(
    x: &Tensor,
    layer: &EncoderLayer,
    store: &ParamStore,
) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (out, _) = layer.forward(&mut g, store, xv)?;
    Ok(g.value(out).clone())
}

/// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let wv = g.input(kernel.clone());
    let c_out = kernel.shape()[0];
    let bv = g.input(bias.cloned().unwrap_or_else(|| Tensor::zeros(&[c_out])));
    let y = g.conv2d(xv, wv, bv, stride, pad)?;
    Ok(g.value(y).clone())
}
