//! Word accuracy and normalized edit distance.

use super::PipelineError;

/// Levenshtein distance, two-row dynamic program over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsCore {
    /// Exact full-string match rate.
    pub word_accuracy: f64,
    /// Mean of `1 - lev(pred, gt) / max(len)`, with the empty/empty case
    /// counting as distance zero.
    pub one_minus_ned: f64,
}

pub fn compute_metrics(preds: &[String], gts: &[String]) -> Result<MetricsCore, PipelineError> {
    if preds.len() != gts.len() {
        return Err(PipelineError::Data(format!(
            "metrics length mismatch: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(PipelineError::Data("metrics over zero samples".into()));
    }
    let mut exact = 0usize;
    let mut ned_sum = 0.0f64;
    for (p, g) in preds.iter().zip(gts) {
        if p == g {
            exact += 1;
        }
        let denom = p.chars().count().max(g.chars().count());
        let ned = if denom == 0 {
            0.0
        } else {
            levenshtein(p, g) as f64 / denom as f64
        };
        ned_sum += 1.0 - ned;
    }
    Ok(MetricsCore {
        word_accuracy: exact as f64 / preds.len() as f64,
        one_minus_ned: ned_sum / preds.len() as f64,
    })
}
