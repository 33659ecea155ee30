//! Encoder-decoder model: a small ViT over image patches feeding a
//! single-layer visio-lingual decoder driven by position-token queries.

mod checkpoint;
mod forward;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, CheckpointError};
pub use forward::{decoder_forward, decoder_forward_queries, encode_image, mha, patchify, RunCtx};

use crate::numerics::{Tape, Tensor, TensorError, TensorId};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use std::fmt;

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
pub enum ModelError {
    Config(String),
    ImageExtents {
        expected: (usize, usize, usize),
        got: usize,
    },
    ContextLength {
        expected: usize,
        got: usize,
    },
    MaskSize {
        expected: usize,
        got: usize,
    },
    Tensor(TensorError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "invalid model config: {msg}"),
            Self::ImageExtents { expected, got } => write!(
                f,
                "image buffer length {got}, expected {}x{}x{}",
                expected.0, expected.1, expected.2
            ),
            Self::ContextLength { expected, got } => {
                write!(f, "context length {got}, expected {expected}")
            }
            Self::MaskSize { expected, got } => {
                write!(f, "mask side {got}, expected {expected}")
            }
            Self::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

/// Architecture and preprocessing hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub channels: usize,
    pub patch_w: usize,
    pub patch_h: usize,
    pub d_model: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_heads: usize,
    pub d_mlp: usize,
    /// Maximum label length `T`.
    pub max_label_len: usize,
    /// Training charset size `S`.
    pub charset_size: usize,
    pub dropout_p: f64,
}

impl ModelConfig {
    /// Desk-scale preset used by the test suite and ablations.
    pub fn tiny64(charset_size: usize) -> Self {
        ModelConfig {
            image_w: 64,
            image_h: 16,
            channels: 1,
            patch_w: 8,
            patch_h: 4,
            d_model: 64,
            enc_depth: 2,
            enc_heads: 2,
            dec_heads: 2,
            d_mlp: 256,
            max_label_len: 8,
            charset_size,
            dropout_p: 0.1,
        }
    }

    /// Small full-pipeline preset: 192-wide, 12-layer encoder, 6-head
    /// single-layer decoder, 128x32 images, T = 25.
    pub fn ti192(charset_size: usize) -> Self {
        ModelConfig {
            image_w: 128,
            image_h: 32,
            channels: 3,
            patch_w: 8,
            patch_h: 4,
            d_model: 192,
            enc_depth: 12,
            enc_heads: 3,
            dec_heads: 6,
            d_mlp: 768,
            max_label_len: 25,
            charset_size,
            dropout_p: 0.1,
        }
    }

    pub fn preset(name: &str, charset_size: usize) -> Option<Self> {
        match name {
            "tiny64" => Some(Self::tiny64(charset_size)),
            "ti192" => Some(Self::ti192(charset_size)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.image_w.is_multiple_of(self.patch_w) || !self.image_h.is_multiple_of(self.patch_h) {
            return Err(ModelError::Config(format!(
                "patch {}x{} does not divide image {}x{}",
                self.patch_w, self.patch_h, self.image_w, self.image_h
            )));
        }
        if !self.d_model.is_multiple_of(self.enc_heads) || !self.d_model.is_multiple_of(self.dec_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by heads {}/{}",
                self.d_model, self.enc_heads, self.dec_heads
            )));
        }
        if self.max_label_len == 0 || self.charset_size == 0 {
            return Err(ModelError::Config(
                "label length and charset size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn img_tokens(&self) -> usize {
        (self.image_w * self.image_h) / (self.patch_w * self.patch_h)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_w * self.patch_h * self.channels
    }

    /// Output-head width `S+1`.
    pub fn num_classes(&self) -> usize {
        self.charset_size + 1
    }

    /// Character-embedding rows `S+3`.
    pub fn embed_rows(&self) -> usize {
        self.charset_size + 3
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<E: Scalar> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct MhaParams<E: Scalar> {
    pub wq: Tensor<E>,
    pub bq: Tensor<E>,
    pub wk: Tensor<E>,
    pub bk: Tensor<E>,
    pub wv: Tensor<E>,
    pub bv: Tensor<E>,
    pub wo: Tensor<E>,
    pub bo: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct MlpParams<E: Scalar> {
    pub w1: Tensor<E>,
    pub b1: Tensor<E>,
    pub w2: Tensor<E>,
    pub b2: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams<E: Scalar> {
    pub ln1: LayerNormParams<E>,
    pub attn: MhaParams<E>,
    pub ln2: LayerNormParams<E>,
    pub mlp: MlpParams<E>,
}

#[derive(Debug, Clone)]
pub struct DecoderParams<E: Scalar> {
    pub norm_q: LayerNormParams<E>,
    pub norm_c: LayerNormParams<E>,
    pub attn_ctx: MhaParams<E>,
    pub norm1: LayerNormParams<E>,
    pub attn_img: MhaParams<E>,
    pub norm2: LayerNormParams<E>,
    pub mlp: MlpParams<E>,
    pub norm_f: LayerNormParams<E>,
}

/// Every learnable weight of the model.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Scalar> {
    pub patch_embed: Tensor<E>,
    pub img_pos: Tensor<E>,
    pub encoder: Vec<EncoderLayerParams<E>>,
    pub enc_norm: LayerNormParams<E>,
    pub pos_tokens: Tensor<E>,
    pub char_embed: Tensor<E>,
    pub decoder: DecoderParams<E>,
    pub head_w: Tensor<E>,
    pub head_b: Tensor<E>,
}

// Tape-side handles, mirroring the parameter structure.

#[derive(Clone, Copy)]
pub struct LayerNormIds {
    pub gamma: TensorId,
    pub beta: TensorId,
}

#[derive(Clone, Copy)]
pub struct MhaIds {
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
}

#[derive(Clone, Copy)]
pub struct MlpIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

#[derive(Clone, Copy)]
pub struct EncoderLayerIds {
    pub ln1: LayerNormIds,
    pub attn: MhaIds,
    pub ln2: LayerNormIds,
    pub mlp: MlpIds,
}

#[derive(Clone, Copy)]
pub struct DecoderIds {
    pub norm_q: LayerNormIds,
    pub norm_c: LayerNormIds,
    pub attn_ctx: MhaIds,
    pub norm1: LayerNormIds,
    pub attn_img: MhaIds,
    pub norm2: LayerNormIds,
    pub mlp: MlpIds,
    pub norm_f: LayerNormIds,
}

#[derive(Clone)]
pub struct ParamIds {
    pub patch_embed: TensorId,
    pub img_pos: TensorId,
    pub encoder: Vec<EncoderLayerIds>,
    pub enc_norm: LayerNormIds,
    pub pos_tokens: TensorId,
    pub char_embed: TensorId,
    pub decoder: DecoderIds,
    pub head_w: TensorId,
    pub head_b: TensorId,
}

fn trunc_normal<E: Scalar>(shape: &[usize], rng: &mut SplitMix64) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.trunc_normal(0.02, 2.0)))
        .collect();
    Tensor::new(data, shape).expect("shape product")
}

fn ones<E: Scalar>(shape: &[usize]) -> Tensor<E> {
    let n: usize = shape.iter().product();
    Tensor::new(vec![E::one(); n], shape).expect("shape product")
}

fn register_one<E: Scalar>(tape: &mut Tape<E>, t: &Tensor<E>, trainable: bool) -> TensorId {
    let mut leaf = t.clone();
    leaf.clear_grad();
    leaf.set_requires_grad(trainable);
    tape.leaf(leaf)
}

impl<E: Scalar> LayerNormParams<E> {
    fn init(d: usize) -> Self {
        LayerNormParams {
            gamma: ones(&[d]),
            beta: Tensor::zeros(&[d]),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<E>)>) {
        out.push((format!("{prefix}.g"), &self.gamma));
        out.push((format!("{prefix}.b"), &self.beta));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        out.push((format!("{prefix}.g"), &mut self.gamma));
        out.push((format!("{prefix}.b"), &mut self.beta));
    }

    fn register(&self, tape: &mut Tape<E>, trainable: bool) -> LayerNormIds {
        LayerNormIds {
            gamma: register_one(tape, &self.gamma, trainable),
            beta: register_one(tape, &self.beta, trainable),
        }
    }
}

impl<E: Scalar> MhaParams<E> {
    fn init(d: usize, rng: &mut SplitMix64) -> Self {
        MhaParams {
            wq: trunc_normal(&[d, d], rng),
            bq: Tensor::zeros(&[d]),
            wk: trunc_normal(&[d, d], rng),
            bk: Tensor::zeros(&[d]),
            wv: trunc_normal(&[d, d], rng),
            bv: Tensor::zeros(&[d]),
            wo: trunc_normal(&[d, d], rng),
            bo: Tensor::zeros(&[d]),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<E>)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.bq"), &self.bq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.bk"), &self.bk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.bv"), &self.bv));
        out.push((format!("{prefix}.wo"), &self.wo));
        out.push((format!("{prefix}.bo"), &self.bo));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.bq"), &mut self.bq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.bk"), &mut self.bk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.bv"), &mut self.bv));
        out.push((format!("{prefix}.wo"), &mut self.wo));
        out.push((format!("{prefix}.bo"), &mut self.bo));
    }

    fn register(&self, tape: &mut Tape<E>, trainable: bool) -> MhaIds {
        MhaIds {
            wq: register_one(tape, &self.wq, trainable),
            bq: register_one(tape, &self.bq, trainable),
            wk: register_one(tape, &self.wk, trainable),
            bk: register_one(tape, &self.bk, trainable),
            wv: register_one(tape, &self.wv, trainable),
            bv: register_one(tape, &self.bv, trainable),
            wo: register_one(tape, &self.wo, trainable),
            bo: register_one(tape, &self.bo, trainable),
        }
    }
}

impl<E: Scalar> MlpParams<E> {
    fn init(d: usize, d_mlp: usize, rng: &mut SplitMix64) -> Self {
        MlpParams {
            w1: trunc_normal(&[d, d_mlp], rng),
            b1: Tensor::zeros(&[d_mlp]),
            w2: trunc_normal(&[d_mlp, d], rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<E>)>) {
        out.push((format!("{prefix}.w1"), &self.w1));
        out.push((format!("{prefix}.b1"), &self.b1));
        out.push((format!("{prefix}.w2"), &self.w2));
        out.push((format!("{prefix}.b2"), &self.b2));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        out.push((format!("{prefix}.w1"), &mut self.w1));
        out.push((format!("{prefix}.b1"), &mut self.b1));
        out.push((format!("{prefix}.w2"), &mut self.w2));
        out.push((format!("{prefix}.b2"), &mut self.b2));
    }

    fn register(&self, tape: &mut Tape<E>, trainable: bool) -> MlpIds {
        MlpIds {
            w1: register_one(tape, &self.w1, trainable),
            b1: register_one(tape, &self.b1, trainable),
            w2: register_one(tape, &self.w2, trainable),
            b2: register_one(tape, &self.b2, trainable),
        }
    }
}

impl<E: Scalar> ModelParams<E> {
    /// Fresh parameters: truncated-normal weights (sigma 0.02, clipped at
    /// two sigma), zero biases, unit norm gains. Deterministic per seed.
    pub fn init(cfg: &ModelConfig, rng: &mut SplitMix64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let encoder = (0..cfg.enc_depth)
            .map(|_| EncoderLayerParams {
                ln1: LayerNormParams::init(d),
                attn: MhaParams::init(d, rng),
                ln2: LayerNormParams::init(d),
                mlp: MlpParams::init(d, cfg.d_mlp, rng),
            })
            .collect();
        Ok(ModelParams {
            patch_embed: trunc_normal(&[cfg.patch_dim(), d], rng),
            img_pos: trunc_normal(&[cfg.img_tokens(), d], rng),
            encoder,
            enc_norm: LayerNormParams::init(d),
            pos_tokens: trunc_normal(&[cfg.max_label_len + 1, d], rng),
            char_embed: trunc_normal(&[cfg.embed_rows(), d], rng),
            decoder: DecoderParams {
                norm_q: LayerNormParams::init(d),
                norm_c: LayerNormParams::init(d),
                attn_ctx: MhaParams::init(d, rng),
                norm1: LayerNormParams::init(d),
                attn_img: MhaParams::init(d, rng),
                norm2: LayerNormParams::init(d),
                mlp: MlpParams::init(d, cfg.d_mlp, rng),
                norm_f: LayerNormParams::init(d),
            },
            head_w: trunc_normal(&[d, cfg.num_classes()], rng),
            head_b: Tensor::zeros(&[cfg.num_classes()]),
        })
    }

    /// All-zero parameters with the configured shapes (checkpoint loading).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let mut rng = SplitMix64::new(0);
        let mut p = Self::init(cfg, &mut rng)?;
        for (_, t) in p.named_mut() {
            t.data_mut().fill(E::zero());
        }
        Ok(p)
    }

    /// Deterministically ordered `(name, tensor)` view of every parameter.
    pub fn named(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out: Vec<(String, &Tensor<E>)> = Vec::new();
        out.push(("patch_embed".to_string(), &self.patch_embed));
        out.push(("img_pos".to_string(), &self.img_pos));
        for (i, layer) in self.encoder.iter().enumerate() {
            layer.ln1.named(&format!("enc{i}.ln1"), &mut out);
            layer.attn.named(&format!("enc{i}.attn"), &mut out);
            layer.ln2.named(&format!("enc{i}.ln2"), &mut out);
            layer.mlp.named(&format!("enc{i}.mlp"), &mut out);
        }
        self.enc_norm.named("enc_norm", &mut out);
        out.push(("pos_tokens".to_string(), &self.pos_tokens));
        out.push(("char_embed".to_string(), &self.char_embed));
        self.decoder.norm_q.named("dec.norm_q", &mut out);
        self.decoder.norm_c.named("dec.norm_c", &mut out);
        self.decoder.attn_ctx.named("dec.attn_ctx", &mut out);
        self.decoder.norm1.named("dec.norm1", &mut out);
        self.decoder.attn_img.named("dec.attn_img", &mut out);
        self.decoder.norm2.named("dec.norm2", &mut out);
        self.decoder.mlp.named("dec.mlp", &mut out);
        self.decoder.norm_f.named("dec.norm_f", &mut out);
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    /// Mutable counterpart of [`ModelParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out: Vec<(String, &mut Tensor<E>)> = Vec::new();
        out.push(("patch_embed".to_string(), &mut self.patch_embed));
        out.push(("img_pos".to_string(), &mut self.img_pos));
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            layer.ln1.named_mut(&format!("enc{i}.ln1"), &mut out);
            layer.attn.named_mut(&format!("enc{i}.attn"), &mut out);
            layer.ln2.named_mut(&format!("enc{i}.ln2"), &mut out);
            layer.mlp.named_mut(&format!("enc{i}.mlp"), &mut out);
        }
        self.enc_norm.named_mut("enc_norm", &mut out);
        out.push(("pos_tokens".to_string(), &mut self.pos_tokens));
        out.push(("char_embed".to_string(), &mut self.char_embed));
        self.decoder.norm_q.named_mut("dec.norm_q", &mut out);
        self.decoder.norm_c.named_mut("dec.norm_c", &mut out);
        self.decoder.attn_ctx.named_mut("dec.attn_ctx", &mut out);
        self.decoder.norm1.named_mut("dec.norm1", &mut out);
        self.decoder.attn_img.named_mut("dec.attn_img", &mut out);
        self.decoder.norm2.named_mut("dec.norm2", &mut out);
        self.decoder.mlp.named_mut("dec.mlp", &mut out);
        self.decoder.norm_f.named_mut("dec.norm_f", &mut out);
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }

    /// Copies all parameters onto a tape as leaves.
    pub fn register(&self, tape: &mut Tape<E>, trainable: bool) -> ParamIds {
        ParamIds {
            patch_embed: register_one(tape, &self.patch_embed, trainable),
            img_pos: register_one(tape, &self.img_pos, trainable),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayerIds {
                    ln1: l.ln1.register(tape, trainable),
                    attn: l.attn.register(tape, trainable),
                    ln2: l.ln2.register(tape, trainable),
                    mlp: l.mlp.register(tape, trainable),
                })
                .collect(),
            enc_norm: self.enc_norm.register(tape, trainable),
            pos_tokens: register_one(tape, &self.pos_tokens, trainable),
            char_embed: register_one(tape, &self.char_embed, trainable),
            decoder: DecoderIds {
                norm_q: self.decoder.norm_q.register(tape, trainable),
                norm_c: self.decoder.norm_c.register(tape, trainable),
                attn_ctx: self.decoder.attn_ctx.register(tape, trainable),
                norm1: self.decoder.norm1.register(tape, trainable),
                attn_img: self.decoder.attn_img.register(tape, trainable),
                norm2: self.decoder.norm2.register(tape, trainable),
                mlp: self.decoder.mlp.register(tape, trainable),
                norm_f: self.decoder.norm_f.register(tape, trainable),
            },
            head_w: register_one(tape, &self.head_w, trainable),
            head_b: register_one(tape, &self.head_b, trainable),
        }
    }

    /// Copies gradients accumulated on the tape back into each parameter.
    pub fn pull_grads(&mut self, tape: &Tape<E>, ids: &ParamIds) -> Result<(), ModelError> {
        let flat = ids.flat();
        let mut named = self.named_mut();
        debug_assert_eq!(flat.len(), named.len());
        for ((name, p), id) in named.iter_mut().zip(flat) {
            if tape.shape(id) != p.shape() {
                return Err(ModelError::Config(format!(
                    "parameter '{name}' shape drift between tape and store"
                )));
            }
            let g = tape.grad(id).ok_or_else(|| {
                ModelError::Tensor(TensorError::NonFinite {
                    what: format!("missing gradient for '{name}'"),
                })
            })?;
            p.set_grad(g.to_vec())?;
        }
        Ok(())
    }
}

impl ParamIds {
    /// Rebuilds the structured handles from a flat id list in
    /// [`ModelParams::named`] order (the inverse of [`ParamIds::flat`]).
    pub fn from_flat(enc_depth: usize, ids: &[TensorId]) -> Option<ParamIds> {
        let mut it = ids.iter().copied();
        let mut next = move || it.next();
        fn ln(next: &mut impl FnMut() -> Option<TensorId>) -> Option<LayerNormIds> {
            Some(LayerNormIds {
                gamma: next()?,
                beta: next()?,
            })
        }
        fn mha_ids(next: &mut impl FnMut() -> Option<TensorId>) -> Option<MhaIds> {
            Some(MhaIds {
                wq: next()?,
                bq: next()?,
                wk: next()?,
                bk: next()?,
                wv: next()?,
                bv: next()?,
                wo: next()?,
                bo: next()?,
            })
        }
        fn mlp_ids(next: &mut impl FnMut() -> Option<TensorId>) -> Option<MlpIds> {
            Some(MlpIds {
                w1: next()?,
                b1: next()?,
                w2: next()?,
                b2: next()?,
            })
        }
        let patch_embed = next()?;
        let img_pos = next()?;
        let mut encoder = Vec::with_capacity(enc_depth);
        for _ in 0..enc_depth {
            encoder.push(EncoderLayerIds {
                ln1: ln(&mut next)?,
                attn: mha_ids(&mut next)?,
                ln2: ln(&mut next)?,
                mlp: mlp_ids(&mut next)?,
            });
        }
        let enc_norm = ln(&mut next)?;
        let pos_tokens = next()?;
        let char_embed = next()?;
        let decoder = DecoderIds {
            norm_q: ln(&mut next)?,
            norm_c: ln(&mut next)?,
            attn_ctx: mha_ids(&mut next)?,
            norm1: ln(&mut next)?,
            attn_img: mha_ids(&mut next)?,
            norm2: ln(&mut next)?,
            mlp: mlp_ids(&mut next)?,
            norm_f: ln(&mut next)?,
        };
        let head_w = next()?;
        let head_b = next()?;
        if next().is_some() {
            return None;
        }
        Some(ParamIds {
            patch_embed,
            img_pos,
            encoder,
            enc_norm,
            pos_tokens,
            char_embed,
            decoder,
            head_w,
            head_b,
        })
    }

    /// Flattened ids, same order as [`ModelParams::named`].
    pub fn flat(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        out.push(self.patch_embed);
        out.push(self.img_pos);
        for l in &self.encoder {
            out.extend([l.ln1.gamma, l.ln1.beta]);
            out.extend([
                l.attn.wq, l.attn.bq, l.attn.wk, l.attn.bk, l.attn.wv, l.attn.bv, l.attn.wo,
                l.attn.bo,
            ]);
            out.extend([l.ln2.gamma, l.ln2.beta]);
            out.extend([l.mlp.w1, l.mlp.b1, l.mlp.w2, l.mlp.b2]);
        }
        out.extend([self.enc_norm.gamma, self.enc_norm.beta]);
        out.push(self.pos_tokens);
        out.push(self.char_embed);
        let d = &self.decoder;
        out.extend([d.norm_q.gamma, d.norm_q.beta]);
        out.extend([d.norm_c.gamma, d.norm_c.beta]);
        out.extend([
            d.attn_ctx.wq,
            d.attn_ctx.bq,
            d.attn_ctx.wk,
            d.attn_ctx.bk,
            d.attn_ctx.wv,
            d.attn_ctx.bv,
            d.attn_ctx.wo,
            d.attn_ctx.bo,
        ]);
        out.extend([d.norm1.gamma, d.norm1.beta]);
        out.extend([
            d.attn_img.wq,
            d.attn_img.bq,
            d.attn_img.wk,
            d.attn_img.bk,
            d.attn_img.wv,
            d.attn_img.bv,
            d.attn_img.wo,
            d.attn_img.bo,
        ]);
        out.extend([d.norm2.gamma, d.norm2.beta]);
        out.extend([d.mlp.w1, d.mlp.b1, d.mlp.w2, d.mlp.b2]);
        out.extend([d.norm_f.gamma, d.norm_f.beta]);
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny64_token_arithmetic() {
        let cfg = ModelConfig::tiny64(36);
        cfg.validate().unwrap();
        assert_eq!(cfg.img_tokens(), 32);
        assert_eq!(cfg.patch_dim(), 32);
        let full = ModelConfig::ti192(94);
        assert_eq!(full.img_tokens(), 128);
        assert_eq!(full.d_model / 32, full.dec_heads);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::tiny64(36);
        let a = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(7)).unwrap();
        let b = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(7)).unwrap();
        let (na, nb) = (a.named(), b.named());
        assert_eq!(na.len(), nb.len());
        for ((name_a, ta), (name_b, tb)) in na.iter().zip(&nb) {
            assert_eq!(name_a, name_b);
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(ta.data(), tb.data(), "{name_a}");
        }
        assert_eq!(a.pos_tokens.shape(), &[9, 64]);
        assert_eq!(a.char_embed.shape(), &[39, 64]);
        assert_eq!(a.head_w.shape(), &[64, 37]);
    }

    #[test]
    fn t25_has_26_position_tokens() {
        let cfg = ModelConfig::ti192(94);
        let p = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(1)).unwrap();
        assert_eq!(p.pos_tokens.shape(), &[26, 192]);
        assert_eq!(p.head_w.shape(), &[192, 95]);
    }

    #[test]
    fn bad_patch_divisibility_rejected() {
        let mut cfg = ModelConfig::tiny64(36);
        cfg.patch_w = 7;
        assert!(matches!(
            ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(1)),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn from_flat_inverts_flat() {
        let cfg = ModelConfig::tiny64(36);
        let params = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(9)).unwrap();
        let mut tape = Tape::new();
        let ids = params.register(&mut tape, true);
        let flat = ids.flat();
        let rebuilt = ParamIds::from_flat(cfg.enc_depth, &flat).unwrap();
        assert_eq!(rebuilt.flat(), flat);
        assert!(ParamIds::from_flat(cfg.enc_depth, &flat[..flat.len() - 1]).is_none());
    }

    #[test]
    fn register_order_matches_named_order() {
        let cfg = ModelConfig::tiny64(36);
        let params = ModelParams::<f64>::init(&cfg, &mut SplitMix64::new(3)).unwrap();
        let mut tape = Tape::new();
        let ids = params.register(&mut tape, true);
        let flat = ids.flat();
        let named = params.named();
        assert_eq!(flat.len(), named.len());
        for ((name, t), id) in named.iter().zip(flat) {
            assert_eq!(t.shape(), tape.shape(id), "{name}");
            assert_eq!(t.data(), tape.data(id), "{name}");
        }
    }
}
