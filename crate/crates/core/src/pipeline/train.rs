//! Dataset preparation, the training step/loop, and evaluation.

use super::{
    decode_ar, decode_nar, resize_to_model_input, DecodeConfig, DecodeOutcome, DecodeScheme,
    EvalRecord, EvalReport, PipelineError, SampleManifest,
};
use crate::model::{encode_image, ModelConfig, ModelParams, RunCtx};
use crate::numerics::Tape;
use crate::optim::{adam_step, AdamState, OneCycleSchedule, SwaState};
use crate::permute::sample_permutations;
use crate::pipeline::loss::plm_loss;
use crate::pipeline::metrics::compute_metrics;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::textcodec::{encode_label, preprocess_label, Charset, EncodedLabel, TokenCodec};

/// Training hyperparameters (model architecture comes from the preset).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub preset: String,
    pub charset_size: usize,
    /// Permutation count K; 1 or even.
    pub k: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub max_lr: f64,
    pub swa_start_frac: f64,
    pub swa_every: u64,
    pub val_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "tiny64".to_string(),
            charset_size: 36,
            k: 6,
            batch_size: 16,
            total_steps: 3000,
            max_lr: 1e-3,
            swa_start_frac: 0.75,
            swa_every: 100,
            val_every: 200,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k != 1 && !self.k.is_multiple_of(2) {
            return Err(PipelineError::Data(format!(
                "permutation count {} must be 1 or even",
                self.k
            )));
        }
        if !(0.0..1.0).contains(&self.swa_start_frac) || self.swa_start_frac == 0.0 {
            return Err(PipelineError::Data(format!(
                "swa_start_frac {} outside (0, 1)",
                self.swa_start_frac
            )));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.swa_every == 0 || self.val_every == 0
        {
            return Err(PipelineError::Data(
                "batch_size, total_steps, swa_every, val_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, PipelineError> {
        ModelConfig::preset(&self.preset, self.charset_size)
            .ok_or_else(|| PipelineError::Data(format!("unknown preset '{}'", self.preset)))
    }
}

/// First update number that uses the constant SWA learning rate.
pub fn swa_start_step(total_steps: u64, frac: f64) -> u64 {
    (frac * total_steps as f64).ceil() as u64
}

/// In-memory dataset: normalized images plus preprocessed labels.
pub struct PreparedDataset<E: Scalar> {
    pub images: Vec<Vec<E>>,
    pub labels: Vec<String>,
    pub encoded: Vec<EncodedLabel>,
    /// Rows whose labels were rejected by preprocessing.
    pub skipped: usize,
}

impl<E: Scalar> PreparedDataset<E> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Loads every manifest row, resizing images and filtering labels through
/// the codec's charset. Rejected labels are counted, not fatal.
pub fn prepare_dataset<E: Scalar>(
    manifest: &SampleManifest,
    cfg: &ModelConfig,
    codec: &TokenCodec,
) -> Result<PreparedDataset<E>, PipelineError> {
    let mut ds = PreparedDataset {
        images: Vec::new(),
        labels: Vec::new(),
        encoded: Vec::new(),
        skipped: 0,
    };
    for row in &manifest.rows {
        let label = match preprocess_label(&row.label, codec.charset(), codec.max_len()) {
            Ok(l) => l,
            Err(_) => {
                ds.skipped += 1;
                continue;
            }
        };
        let img = super::read_netpbm(&manifest.base_dir.join(&row.rel_path))?;
        ds.images.push(resize_to_model_input(&img, cfg));
        ds.encoded.push(encode_label(&label, codec)?);
        ds.labels.push(label);
    }
    if ds.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(ds)
}

/// Mutable training state threaded through steps.
pub struct TrainState<E: Scalar> {
    pub params: ModelParams<E>,
    pub adam: AdamState<E>,
    pub sched: OneCycleSchedule,
    pub swa: SwaState,
    pub step: u64,
    pub perm_rng: SplitMix64,
    pub dropout_rng: SplitMix64,
    pub data_rng: SplitMix64,
    order: Vec<usize>,
    cursor: usize,
}

impl<E: Scalar> TrainState<E> {
    pub fn new(cfg: &TrainConfig, model_cfg: &ModelConfig, n_samples: usize) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let mut master = SplitMix64::new(cfg.seed);
        let mut init_rng = master.fork();
        let perm_rng = master.fork();
        let dropout_rng = master.fork();
        let data_rng = master.fork();
        let params = ModelParams::init(model_cfg, &mut init_rng)?;
        Ok(TrainState {
            params,
            adam: AdamState::with_defaults(),
            sched: OneCycleSchedule::with_defaults(cfg.max_lr, cfg.total_steps),
            swa: SwaState::new(cfg.max_lr / 20.0),
            step: 0,
            perm_rng,
            dropout_rng,
            data_rng,
            order: (0..n_samples).collect(),
            cursor: n_samples, // forces a shuffle on first use
        })
    }

    /// Next batch of sample indices, reshuffling each epoch.
    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let n = self.order.len();
        let take = batch_size.min(n);
        if self.cursor + take > n {
            self.data_rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + take].to_vec();
        self.cursor += take;
        batch
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    /// Images encoded this step (one per sample).
    pub encodes: usize,
    /// Decoder passes this step (one per sample per permutation).
    pub decodes: usize,
}

/// One training step: fresh permutations, one encode per image, K masked
/// decodes per image, backward, Adam update.
pub fn train_step<E: Scalar>(
    state: &mut TrainState<E>,
    ds: &PreparedDataset<E>,
    batch: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepStats, PipelineError> {
    let t_batch = batch
        .iter()
        .map(|&i| ds.encoded[i].len)
        .max()
        .unwrap_or(1)
        .max(1);
    let perms = sample_permutations(cfg.k, t_batch, &mut state.perm_rng)?;

    let mut tape = Tape::new();
    let ids = state.params.register(&mut tape, true);
    let mut ctx = RunCtx::train(model_cfg.dropout_p, &mut state.dropout_rng);
    let mut z_ids = Vec::with_capacity(batch.len());
    for &i in batch {
        z_ids.push(encode_image(&mut tape, &ds.images[i], &ids, model_cfg, &mut ctx)?);
    }
    let encoded: Vec<EncodedLabel> = batch.iter().map(|&i| ds.encoded[i].clone()).collect();
    let charset = Charset::slice(model_cfg.charset_size)
        .map_err(PipelineError::Codec)?;
    let codec = TokenCodec::new(charset, model_cfg.max_label_len);
    let loss_id = plm_loss(
        &mut tape, &z_ids, &encoded, &perms, &ids, model_cfg, &codec, &mut ctx,
    )?;
    let loss = tape.scalar_value(loss_id)?.to_f64().unwrap_or(f64::NAN);
    if !loss.is_finite() {
        return Err(PipelineError::NonFiniteLoss {
            step: state.step,
            lr,
            loss,
        });
    }
    tape.backward(loss_id)?;
    state.params.pull_grads(&tape, &ids)?;
    let mut named = state.params.named_mut();
    adam_step(&mut named, &mut state.adam, lr)?;
    state.step += 1;
    Ok(StepStats {
        loss,
        lr,
        encodes: batch.len(),
        decodes: batch.len() * perms.len(),
    })
}

/// Final state of a training run.
pub struct TrainOutcome {
    /// Weight-averaged parameters (the evaluation checkpoint).
    pub params: ModelParams<f32>,
    pub model_cfg: ModelConfig,
    pub final_loss: f64,
}

/// Full training run: 1cycle schedule, SWA snapshots after the configured
/// fraction, periodic `step lr loss val_word_acc` log lines, and the
/// averaged checkpoint at the end.
pub fn train_loop(
    cfg: &TrainConfig,
    manifest: &SampleManifest,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let charset = Charset::slice(cfg.charset_size)?;
    let codec = TokenCodec::new(charset, model_cfg.max_label_len);
    let ds: PreparedDataset<f32> = prepare_dataset(manifest, &model_cfg, &codec)?;
    if ds.skipped > 0 {
        log(&format!("skipped {} rows with unusable labels", ds.skipped));
    }
    let mut state = TrainState::new(cfg, &model_cfg, ds.len())?;
    let swa_start = swa_start_step(cfg.total_steps, cfg.swa_start_frac);
    let mut final_loss = f64::NAN;
    for s in 0..cfg.total_steps {
        let update = s + 1;
        let lr = if update >= swa_start {
            state.swa.swa_lr
        } else {
            state.sched.lr_at(s)?
        };
        let batch = state.next_batch(cfg.batch_size);
        let stats = train_step(&mut state, &ds, &batch, &model_cfg, cfg, lr)?;
        final_loss = stats.loss;
        if update >= swa_start && ((update - swa_start).is_multiple_of(cfg.swa_every) || update == cfg.total_steps)
        {
            let named = state.params.named();
            state.swa.update(&named)?;
        }
        if update % cfg.val_every == 0 || update == cfg.total_steps {
            let val_n = ds.len().min(64);
            let subset: Vec<usize> = (0..val_n).collect();
            let acc = quick_word_accuracy(&state.params, &model_cfg, &codec, &ds, &subset)?;
            log(&format!("{update} {lr:.6e} {:.6} {acc:.4}", stats.loss));
        }
    }
    let averaged_flat = state.swa.finalize::<f32>()?;
    let mut params = state.params.clone();
    {
        let mut named = params.named_mut();
        debug_assert_eq!(named.len(), averaged_flat.len());
        for ((_, t), avg) in named.iter_mut().zip(averaged_flat) {
            t.data_mut().copy_from_slice(&avg);
            t.clear_grad();
        }
    }
    Ok(TrainOutcome {
        params,
        model_cfg,
        final_loss,
    })
}

fn quick_word_accuracy<E: Scalar>(
    params: &ModelParams<E>,
    model_cfg: &ModelConfig,
    codec: &TokenCodec,
    ds: &PreparedDataset<E>,
    subset: &[usize],
) -> Result<f64, PipelineError> {
    let mut hits = 0usize;
    for &i in subset {
        let out = decode_ar(params, model_cfg, codec, &ds.images[i], 0, model_cfg.charset_size)?;
        if out.text == ds.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / subset.len().max(1) as f64)
}

/// Decodes every sample and aggregates metrics.
pub fn evaluate<E: Scalar>(
    params: &ModelParams<E>,
    model_cfg: &ModelConfig,
    codec: &TokenCodec,
    ds: &PreparedDataset<E>,
    decode_cfg: DecodeConfig,
    s_eval: usize,
) -> Result<EvalReport, PipelineError> {
    let mut records = Vec::with_capacity(ds.len());
    let mut preds = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let out: DecodeOutcome = match decode_cfg.scheme {
            DecodeScheme::Ar => decode_ar(
                params,
                model_cfg,
                codec,
                &ds.images[i],
                decode_cfg.refine_iters,
                s_eval,
            )?,
            DecodeScheme::Nar => decode_nar(
                params,
                model_cfg,
                codec,
                &ds.images[i],
                decode_cfg.refine_iters,
                s_eval,
            )?,
        };
        preds.push(out.text.clone());
        records.push(EvalRecord {
            prediction: out.text,
            ground_truth: ds.labels[i].clone(),
            confidence: out.confidence,
            latency_ms: out.latency_ms,
        });
    }
    let metrics = compute_metrics(&preds, &ds.labels)?;
    Ok(EvalReport {
        word_accuracy: metrics.word_accuracy,
        one_minus_ned: metrics.one_minus_ned,
        records,
        charset_size: s_eval,
        scheme: decode_cfg.scheme,
        refine_iters: decode_cfg.refine_iters,
    })
}
