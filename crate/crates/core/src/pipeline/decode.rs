//! Decoding: monotonic autoregressive, single-pass non-autoregressive, and
//! iterative cloze refinement.

use super::PipelineError;
use crate::model::{
    decoder_forward, decoder_forward_queries, encode_image, ModelConfig, ModelParams, ParamIds,
    RunCtx,
};
use crate::numerics::{Tape, TensorId};
use crate::permute::{
    apply_context_restrictions, cloze_mask, mask_from_permutation, AttentionMask, MaskRole,
    Permutation,
};
use crate::scalar::Scalar;
use crate::textcodec::{decode_ids, TokenCodec};
use std::fmt;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeScheme {
    Ar,
    Nar,
}

impl fmt::Display for DecodeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ar => write!(f, "ar"),
            Self::Nar => write!(f, "nar"),
        }
    }
}

/// Scheme plus refinement-iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub scheme: DecodeScheme,
    pub refine_iters: usize,
}

impl DecodeConfig {
    /// Scheme defaults: one refinement for AR, two for NAR.
    pub fn for_scheme(scheme: DecodeScheme) -> Self {
        let refine_iters = match scheme {
            DecodeScheme::Ar => 1,
            DecodeScheme::Nar => 2,
        };
        DecodeConfig {
            scheme,
            refine_iters,
        }
    }
}

/// Result of decoding one image.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub text: String,
    pub ids: Vec<usize>,
    /// Per-emitted-character softmax maxima.
    pub confidences: Vec<f64>,
    /// Product of per-position confidences (including the terminating
    /// `[E]` when one was emitted).
    pub confidence: f64,
    pub scheme: DecodeScheme,
    pub refine_iters: usize,
    pub latency_ms: f64,
    /// Number of decoder forward passes performed.
    pub decoder_invocations: usize,
}

/// Decoder pass outcome: character ids, their confidences, and the
/// terminator probability when `[E]` was emitted.
type DecodeState = (Vec<usize>, Vec<f64>, Option<f64>);

pub(super) struct Session<'a, E: Scalar> {
    tape: Tape<E>,
    ids: ParamIds,
    cfg: &'a ModelConfig,
    codec: &'a TokenCodec,
    /// Evaluation-charset width: argmax only considers character ids below
    /// this bound (plus `[E]`).
    s_eval: usize,
    z: TensorId,
    /// Tape size right after encoding; each decoder pass rolls back here.
    watermark: usize,
    calls: usize,
}

impl<'a, E: Scalar> Session<'a, E> {
    pub(super) fn new(
        params: &ModelParams<E>,
        cfg: &'a ModelConfig,
        codec: &'a TokenCodec,
        s_eval: usize,
        img: &[E],
    ) -> Result<Self, PipelineError> {
        let mut tape = Tape::new();
        let ids = params.register(&mut tape, false);
        let z = encode_image(&mut tape, img, &ids, cfg, &mut RunCtx::eval())?;
        let watermark = tape.num_tensors();
        Ok(Session {
            tape,
            ids,
            cfg,
            codec,
            s_eval,
            z,
            watermark,
            calls: 0,
        })
    }

    fn forward(
        &mut self,
        context: &[usize],
        mask: &AttentionMask,
        n_queries: usize,
    ) -> Result<Vec<E>, PipelineError> {
        let restricted = apply_context_restrictions(
            mask,
            context,
            self.codec.eos_id(),
            self.codec.pad_id(),
        )?;
        let logits = decoder_forward_queries(
            &mut self.tape,
            self.z,
            context,
            &restricted,
            &self.ids,
            self.cfg,
            &mut RunCtx::eval(),
            n_queries,
        )?;
        self.calls += 1;
        let data = self.tape.data(logits).to_vec();
        self.tape.truncate_to(self.watermark);
        Ok(data)
    }

    fn forward_full(
        &mut self,
        context: &[usize],
        mask: &AttentionMask,
    ) -> Result<Vec<E>, PipelineError> {
        let restricted = apply_context_restrictions(
            mask,
            context,
            self.codec.eos_id(),
            self.codec.pad_id(),
        )?;
        let logits = decoder_forward(
            &mut self.tape,
            self.z,
            context,
            &restricted,
            &self.ids,
            self.cfg,
            &mut RunCtx::eval(),
        )?;
        self.calls += 1;
        let data = self.tape.data(logits).to_vec();
        self.tape.truncate_to(self.watermark);
        Ok(data)
    }

    /// Greedy pick over the evaluation charset plus `[E]`, with the
    /// softmax renormalized over that admissible set.
    fn argmax_row(&self, row: &[E]) -> (usize, f64) {
        let eos = self.codec.eos_id();
        let admissible = |id: usize| id < self.s_eval || id == eos;
        let mut best = eos;
        let mut best_v = f64::NEG_INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        for (id, &v) in row.iter().enumerate() {
            if !admissible(id) {
                continue;
            }
            let v = v.to_f64().unwrap_or(f64::NEG_INFINITY);
            if v > max_v {
                max_v = v;
            }
            if v > best_v {
                best_v = v;
                best = id;
            }
        }
        let mut z = 0.0f64;
        for (id, &v) in row.iter().enumerate() {
            if admissible(id) {
                z += (v.to_f64().unwrap_or(f64::NEG_INFINITY) - max_v).exp();
            }
        }
        (best, (best_v - max_v).exp() / z)
    }

    fn padded_context(&self, chars: &[usize]) -> Vec<usize> {
        let t = self.cfg.max_label_len;
        let mut ctx = Vec::with_capacity(t + 1);
        ctx.push(self.codec.bos_id());
        ctx.extend_from_slice(&chars[..chars.len().min(t)]);
        ctx.resize(t + 1, self.codec.pad_id());
        ctx
    }

    /// One token per iteration under the left-to-right lookahead mask,
    /// feeding back the argmax context. `forced` overrides token choice
    /// (identical compute path) for latency benchmarking.
    fn run_ar(&mut self, forced: Option<usize>) -> Result<DecodeState, PipelineError> {
        let t = self.cfg.max_label_len;
        let ltr = mask_from_permutation(&Permutation::identity(t), MaskRole::LtrPairFirst);
        let mut chars: Vec<usize> = Vec::new();
        let mut confs: Vec<f64> = Vec::new();
        let mut eos_conf = None;
        for i in 1..=t + 1 {
            let ctx = self.padded_context(&chars);
            let logits = self.forward(&ctx, &ltr, i)?;
            let c = self.cfg.num_classes();
            let row = &logits[(i - 1) * c..i * c];
            let (mut tok, p) = self.argmax_row(row);
            if let Some(len) = forced {
                tok = if chars.len() < len { 0 } else { self.codec.eos_id() };
            }
            if tok == self.codec.eos_id() {
                eos_conf = Some(p);
                break;
            }
            if i == t + 1 {
                break;
            }
            chars.push(tok);
            confs.push(p);
        }
        Ok((chars, confs, eos_conf))
    }

    /// All positions in one pass, context `[B]` only.
    fn run_nar(&mut self) -> Result<DecodeState, PipelineError> {
        let t = self.cfg.max_label_len;
        let all = AttentionMask::all_ones(t);
        let ctx = self.padded_context(&[]);
        let logits = self.forward_full(&ctx, &all)?;
        Ok(self.collect_rows(&logits))
    }

    /// One cloze pass conditioned on the previous output.
    fn run_cloze(&mut self, prev_chars: &[usize]) -> Result<DecodeState, PipelineError> {
        let t = self.cfg.max_label_len;
        let mask = cloze_mask(t);
        let ctx = self.padded_context(prev_chars);
        let logits = self.forward_full(&ctx, &mask)?;
        Ok(self.collect_rows(&logits))
    }

    /// Greedy per-row pick, truncated at the first `[E]`.
    fn collect_rows(&self, logits: &[E]) -> DecodeState {
        let t = self.cfg.max_label_len;
        let c = self.cfg.num_classes();
        let mut chars = Vec::new();
        let mut confs = Vec::new();
        let mut eos_conf = None;
        for i in 0..=t {
            let row = &logits[i * c..(i + 1) * c];
            let (tok, p) = self.argmax_row(row);
            if tok == self.codec.eos_id() {
                eos_conf = Some(p);
                break;
            }
            if i == t {
                // final query emitted a character: full-length output, no
                // terminator confidence to attribute
                break;
            }
            chars.push(tok);
            confs.push(p);
        }
        (chars, confs, eos_conf)
    }

    fn refine_loop(
        &mut self,
        mut state: DecodeState,
        iters: usize,
    ) -> Result<DecodeState, PipelineError> {
        for _ in 0..iters {
            state = self.run_cloze(&state.0)?;
        }
        Ok(state)
    }
}

fn finish(
    state: DecodeState,
    scheme: DecodeScheme,
    refine_iters: usize,
    calls: usize,
    started: Instant,
    codec: &TokenCodec,
) -> Result<DecodeOutcome, PipelineError> {
    let (ids, confidences, eos_conf) = state;
    let text = decode_ids(&ids, codec)?;
    let mut confidence: f64 = confidences.iter().product();
    if let Some(p) = eos_conf {
        confidence *= p;
    }
    Ok(DecodeOutcome {
        text,
        ids,
        confidences,
        confidence,
        scheme,
        refine_iters,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
        decoder_invocations: calls,
    })
}

/// Autoregressive decoding plus `refine_iters` cloze refinements.
pub fn decode_ar<E: Scalar>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    codec: &TokenCodec,
    img: &[E],
    refine_iters: usize,
    s_eval: usize,
) -> Result<DecodeOutcome, PipelineError> {
    let started = Instant::now();
    let mut session = Session::new(params, cfg, codec, s_eval, img)?;
    let state = session.run_ar(None)?;
    let state = session.refine_loop(state, refine_iters)?;
    finish(state, DecodeScheme::Ar, refine_iters, session.calls, started, codec)
}

/// Non-autoregressive decoding plus `refine_iters` cloze refinements.
pub fn decode_nar<E: Scalar>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    codec: &TokenCodec,
    img: &[E],
    refine_iters: usize,
    s_eval: usize,
) -> Result<DecodeOutcome, PipelineError> {
    let started = Instant::now();
    let mut session = Session::new(params, cfg, codec, s_eval, img)?;
    let state = session.run_nar()?;
    let state = session.refine_loop(state, refine_iters)?;
    finish(state, DecodeScheme::Nar, refine_iters, session.calls, started, codec)
}

/// One cloze refinement of an externally supplied prediction (for example
/// the ground truth, when measuring refinement quality).
pub fn refine_with_context<E: Scalar>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    codec: &TokenCodec,
    img: &[E],
    prev_ids: &[usize],
    s_eval: usize,
) -> Result<DecodeOutcome, PipelineError> {
    let started = Instant::now();
    let mut session = Session::new(params, cfg, codec, s_eval, img)?;
    let state = session.run_cloze(prev_ids)?;
    finish(state, DecodeScheme::Nar, 1, session.calls, started, codec)
}

impl<E: Scalar> Session<'_, E> {
    /// One forced-length decode for latency benchmarking: the compute path
    /// is the real one, only the token choice is overridden. Returns the
    /// elapsed milliseconds, excluding image encoding (done at session
    /// construction).
    pub(super) fn timed_forced(
        &mut self,
        scheme: DecodeScheme,
        refine_iters: usize,
        forced_len: usize,
    ) -> Result<f64, PipelineError> {
        let started = Instant::now();
        let state = match scheme {
            DecodeScheme::Ar => self.run_ar(Some(forced_len))?,
            DecodeScheme::Nar => {
                let (mut ids, confs, eos) = self.run_nar()?;
                ids.truncate(forced_len);
                ids.resize(forced_len, 0);
                (ids, confs, eos)
            }
        };
        self.refine_loop(state, refine_iters)?;
        Ok(started.elapsed().as_secs_f64() * 1e3)
    }
}
