//! End-to-end machinery: data ingestion, synthetic rendering, the
//! permutation training objective and loop, decoding schemes, metrics,
//! and latency benchmarking.

mod bench;
mod decode;
mod image;
mod loss;
mod metrics;
mod synth;
mod train;

pub use bench::{latency_bench, linear_fit, render_bench_table, render_bench_tsv, BenchRow};
pub use decode::{decode_ar, decode_nar, refine_with_context, DecodeConfig, DecodeOutcome, DecodeScheme};
pub use image::{parse_netpbm, read_netpbm, resize_to_model_input, write_pgm, RawImage};
pub use loss::{perm_role, plm_loss};
pub use metrics::{compute_metrics, levenshtein, MetricsCore};
pub use synth::{random_labels, render_label_canvas, render_synthetic, glyph_for};
pub use train::{
    evaluate, prepare_dataset, swa_start_step, train_loop, train_step, PreparedDataset,
    StepStats, TrainConfig, TrainOutcome, TrainState,
};

use crate::model::{CheckpointError, ModelError};
use crate::numerics::TensorError;
use crate::optim::OptimError;
use crate::permute::PermuteError;
use crate::textcodec::CodecError;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum PipelineError {
    Model(ModelError),
    Tensor(TensorError),
    Codec(CodecError),
    Permute(PermuteError),
    Optim(OptimError),
    Checkpoint(CheckpointError),
    /// Data-level failure, with the offending path when known.
    Data(String),
    Io(PathBuf, std::io::Error),
    /// Training aborted on a non-finite loss; carries diagnostics.
    NonFiniteLoss {
        step: u64,
        lr: f64,
        loss: f64,
    },
    EmptyDataset,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Model(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Codec(e) => write!(f, "{e}"),
            Self::Permute(e) => write!(f, "{e}"),
            Self::Optim(e) => write!(f, "{e}"),
            Self::Checkpoint(e) => write!(f, "{e}"),
            Self::Data(msg) => write!(f, "data error: {msg}"),
            Self::Io(path, e) => write!(f, "io error at {}: {e}", path.display()),
            Self::NonFiniteLoss { step, lr, loss } => {
                write!(f, "non-finite loss {loss} at step {step} (lr {lr:e})")
            }
            Self::EmptyDataset => write!(f, "no usable samples after label filtering"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        PipelineError::Model(e)
    }
}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        PipelineError::Tensor(e)
    }
}

impl From<CodecError> for PipelineError {
    fn from(e: CodecError) -> Self {
        PipelineError::Codec(e)
    }
}

impl From<PermuteError> for PipelineError {
    fn from(e: PermuteError) -> Self {
        PipelineError::Permute(e)
    }
}

impl From<OptimError> for PipelineError {
    fn from(e: OptimError) -> Self {
        PipelineError::Optim(e)
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Checkpoint(e)
    }
}

/// One dataset row: image path relative to the manifest directory plus the
/// raw (unpreprocessed) label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub rel_path: String,
    pub label: String,
}

/// Tab-separated manifest resolved against its base directory.
#[derive(Debug, Clone)]
pub struct SampleManifest {
    pub base_dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl SampleManifest {
    /// Reads `path<TAB>label` rows and verifies every image file exists and
    /// every label is non-empty.
    pub fn load(manifest_path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(manifest_path)
            .map_err(|e| PipelineError::Io(manifest_path.to_path_buf(), e))?;
        let base_dir = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (rel_path, label) = line.split_once('\t').ok_or_else(|| {
                PipelineError::Data(format!(
                    "{}:{}: expected 'path<TAB>label'",
                    manifest_path.display(),
                    i + 1
                ))
            })?;
            if label.is_empty() {
                return Err(PipelineError::Data(format!(
                    "{}:{}: empty label",
                    manifest_path.display(),
                    i + 1
                )));
            }
            let full = base_dir.join(rel_path);
            if !full.is_file() {
                return Err(PipelineError::Data(format!(
                    "missing image file {}",
                    full.display()
                )));
            }
            rows.push(ManifestRow {
                rel_path: rel_path.to_string(),
                label: label.to_string(),
            });
        }
        Ok(SampleManifest { base_dir, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Per-sample record of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub prediction: String,
    pub ground_truth: String,
    pub confidence: f64,
    pub latency_ms: f64,
}

/// Aggregate evaluation result.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub word_accuracy: f64,
    pub one_minus_ned: f64,
    pub records: Vec<EvalRecord>,
    pub charset_size: usize,
    pub scheme: DecodeScheme,
    pub refine_iters: usize,
}

impl EvalReport {
    /// Line-delimited records: `prediction<TAB>gt<TAB>confidence<TAB>ms`.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.3}\n",
                r.prediction, r.ground_truth, r.confidence, r.latency_ms
            ));
        }
        out
    }

    pub fn render_summary(&self) -> String {
        let mean_latency = if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| r.latency_ms).sum::<f64>() / self.records.len() as f64
        };
        format!(
            "samples        {}\nscheme         {}\nrefine_iters   {}\ncharset        {}\nword_accuracy  {:.4}\none_minus_ned  {:.4}\nmean_latency   {:.3} ms\n",
            self.records.len(),
            self.scheme,
            self.refine_iters,
            self.charset_size,
            self.word_accuracy,
            self.one_minus_ned,
            mean_latency
        )
    }
}
