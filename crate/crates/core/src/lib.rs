//! A self-contained text-image recognizer built on permuted autoregressive
//! sequence modeling.
//!
//! The crate trains a small ViT encoder plus a single-layer visio-lingual
//! decoder with a K-permutation language-modeling objective, then decodes
//! either autoregressively (one token per step), non-autoregressively (all
//! positions at once), or through iterative cloze refinement. Everything is
//! built from scratch: the dense-tensor engine with reverse-mode autodiff,
//! the optimizer stack, attention-mask construction, PGM/PPM image I/O, and
//! a deterministic synthetic-corpus renderer.
//!
//! Core math is generic over the scalar type ([`scalar::Scalar`], implemented
//! for `f32` and `f64`): training runs in `f32`, gradient checks and oracles
//! in `f64`.

pub mod cli;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod permute;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod textcodec;

/// Training-precision tensor.
pub type Tensor32 = numerics::Tensor<f32>;
/// Oracle/gradient-check-precision tensor.
pub type Tensor64 = numerics::Tensor<f64>;
/// Training-precision tape.
pub type Tape32 = numerics::Tape<f32>;
/// Oracle/gradient-check-precision tape.
pub type Tape64 = numerics::Tape<f64>;
/// Training-precision model parameters.
pub type ModelParams32 = model::ModelParams<f32>;
/// Oracle-precision model parameters.
pub type ModelParams64 = model::ModelParams<f64>;
