//! The permutation training objective.

use super::PipelineError;
use crate::model::{decoder_forward, ModelConfig, ParamIds, RunCtx};
use crate::numerics::{Tape, TensorId};
use crate::permute::{apply_context_restrictions, mask_from_permutation_padded, MaskRole, Permutation};
use crate::scalar::Scalar;
use crate::textcodec::{EncodedLabel, TokenCodec};

/// Role of the k-th sampled permutation. The first is always the canonical
/// left-to-right order and its flipped partner sits at `k_total/2`; only
/// those two train the `[E]` prediction, per the delimiter-handling rule.
pub fn perm_role(k: usize, k_total: usize) -> MaskRole {
    if k == 0 {
        MaskRole::LtrPairFirst
    } else if k == k_total / 2 {
        MaskRole::RtlPairSecond
    } else {
        MaskRole::Interior
    }
}

/// Mean over the K permutation-derived cross-entropy losses.
///
/// `z_ids` are per-sample image features already on the tape (encoded once
/// per image); each permutation decodes every sample under its mask, the
/// per-sample logits are stacked, and one padded cross-entropy per
/// permutation is averaged. For interior permutations the `[E]` targets
/// are replaced by padding so the delimiter only trains on the canonical
/// pair.
#[allow(clippy::too_many_arguments)]
pub fn plm_loss<E: Scalar>(
    tape: &mut Tape<E>,
    z_ids: &[TensorId],
    encoded: &[EncodedLabel],
    perms: &[Permutation],
    params: &ParamIds,
    cfg: &ModelConfig,
    codec: &TokenCodec,
    ctx: &mut RunCtx<'_>,
) -> Result<TensorId, PipelineError> {
    if z_ids.len() != encoded.len() || encoded.is_empty() || perms.is_empty() {
        return Err(PipelineError::Data(format!(
            "loss over {} feature sets, {} labels, {} permutations",
            z_ids.len(),
            encoded.len(),
            perms.len()
        )));
    }
    let (eos, pad) = (codec.eos_id(), codec.pad_id());
    let mut total: Option<TensorId> = None;
    for (k, perm) in perms.iter().enumerate() {
        let role = perm_role(k, perms.len());
        let mask = mask_from_permutation_padded(perm, cfg.max_label_len, role);
        let mut logit_parts = Vec::with_capacity(encoded.len());
        let mut targets = Vec::with_capacity(encoded.len() * (cfg.max_label_len + 1));
        for (&z, enc) in z_ids.iter().zip(encoded) {
            let restricted = apply_context_restrictions(&mask, &enc.context_ids, eos, pad)?;
            let logits = decoder_forward(tape, z, &enc.context_ids, &restricted, params, cfg, ctx)?;
            logit_parts.push(logits);
            if role == MaskRole::Interior {
                targets.extend(enc.target_ids.iter().map(|&t| if t == eos { pad } else { t }));
            } else {
                targets.extend_from_slice(&enc.target_ids);
            }
        }
        let stacked = tape.concat_rows(&logit_parts)?;
        let ce = tape.masked_cross_entropy(stacked, &targets, pad)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let total = total.expect("at least one permutation");
    Ok(tape.scale(total, E::from_f64(1.0 / perms.len() as f64)))
}
