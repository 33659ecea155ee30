//! Decode-latency measurement at forced output lengths.

use super::decode::Session;
use super::{DecodeConfig, DecodeScheme, PipelineError};
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::textcodec::TokenCodec;

#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub length: usize,
    pub scheme: DecodeScheme,
    pub ms_per_image: f64,
}

/// Measures per-image decode latency (excluding image encoding) for both
/// schemes at each forced output length. Refinement iterations follow the
/// scheme defaults.
///
/// Per scheme, one session encodes the image once and the lengths are then
/// visited round-robin: two full discarded warmup rounds, then `reps`
/// timed rounds. Interleaving the lengths spreads any slow drift (cache
/// warming, frequency scaling, background load) evenly across them, and
/// the per-length median discards one-off stalls.
pub fn latency_bench<E: Scalar>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    codec: &TokenCodec,
    lengths: &[usize],
    reps: usize,
) -> Result<Vec<BenchRow>, PipelineError> {
    if reps == 0 {
        return Err(PipelineError::Data("reps must be positive".into()));
    }
    for &len in lengths {
        if len == 0 || len > cfg.max_label_len {
            return Err(PipelineError::Data(format!(
                "forced length {len} outside 1..={}",
                cfg.max_label_len
            )));
        }
    }
    let img = vec![E::zero(); cfg.image_w * cfg.image_h * cfg.channels];
    let warmup_rounds = 2usize;
    let mut rows = Vec::with_capacity(lengths.len() * 2);
    for scheme in [DecodeScheme::Nar, DecodeScheme::Ar] {
        let refines = DecodeConfig::for_scheme(scheme).refine_iters;
        let mut session = Session::new(params, cfg, codec, cfg.charset_size, &img)?;
        let mut samples = vec![Vec::with_capacity(reps); lengths.len()];
        for round in 0..warmup_rounds + reps {
            for (i, &len) in lengths.iter().enumerate() {
                let ms = session.timed_forced(scheme, refines, len)?;
                if round >= warmup_rounds {
                    samples[i].push(ms);
                }
            }
        }
        for (i, &len) in lengths.iter().enumerate() {
            samples[i].sort_by(f64::total_cmp);
            rows.push(BenchRow {
                length: len,
                scheme,
                ms_per_image: samples[i][samples[i].len() / 2],
            });
        }
    }
    Ok(rows)
}

/// Aligned human-readable table.
pub fn render_bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("length  scheme  ms/image\n");
    for r in rows {
        out.push_str(&format!(
            "{:>6}  {:>6}  {:>8.3}\n",
            r.length, r.scheme, r.ms_per_image
        ));
    }
    out
}

/// Machine-readable rows: `length<TAB>scheme<TAB>ms`.
pub fn render_bench_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!("{}\t{}\t{:.6}\n", r.length, r.scheme, r.ms_per_image));
    }
    out
}

/// Least-squares slope, intercept, and r-squared of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
