//! Factorization-order sampling and attention-mask construction.
//!
//! An attention mask is a `(T+1) x (T+1)` boolean matrix: rows index the
//! output tokens `[y_1 .. y_T, [E]]`, columns index the input context
//! `[[B], y_1 .. y_T]`. A set bit means the output token may condition on
//! that context position. Character rows follow the factorization order;
//! the `[E]` row depends on the mask's role: the canonical left-to-right
//! mask gives `[E]` the full context, its flipped partner gives it none
//! (which is what context-free decoding relies on), and interior
//! permutations keep an all-ones `[E]` row whose loss the pipeline drops.

use crate::rng::SplitMix64;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PermuteError {
    /// Order is not a permutation of 1..=T.
    InvalidOrder(Vec<usize>),
    /// K must be 1 or even.
    OddPermutationCount(usize),
    /// T must be at least 1.
    EmptySequence,
    /// Context length does not match the mask.
    ContextLength { expected: usize, got: usize },
}

impl fmt::Display for PermuteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidOrder(o) => write!(f, "not a permutation of 1..=T: {o:?}"),
            Self::OddPermutationCount(k) => {
                write!(f, "permutation count {k} must be 1 or even")
            }
            Self::EmptySequence => write!(f, "sequence length must be at least 1"),
            Self::ContextLength { expected, got } => {
                write!(f, "context length {got}, mask expects {expected}")
            }
        }
    }
}

impl std::error::Error for PermuteError {}

/// A factorization order: the indices `1..=T`, each exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, PermuteError> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if order.is_empty() || sorted.iter().enumerate().any(|(i, &v)| v != i + 1) {
            return Err(PermuteError::InvalidOrder(order));
        }
        Ok(Permutation { order })
    }

    /// The left-to-right order `[1, 2, .., t]`.
    pub fn identity(t: usize) -> Self {
        Permutation {
            order: (1..=t).collect(),
        }
    }

    /// Element-reversal (the "flipped" partner).
    pub fn reversed(&self) -> Self {
        let mut order = self.order.clone();
        order.reverse();
        Permutation { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// How a mask treats the `[E]` output row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    /// Random interior permutation: all-ones `[E]` row, loss excluded
    /// downstream.
    Interior,
    /// The canonical left-to-right mask: `[E]` sees the whole context.
    LtrPairFirst,
    /// The flipped partner of the canonical mask: `[E]` sees only `[B]`.
    RtlPairSecond,
}

/// Boolean conditional-dependency matrix, `(t+1) x (t+1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    t: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    fn new_zeroed(t: usize) -> Self {
        AttentionMask {
            t,
            bits: vec![false; (t + 1) * (t + 1)],
        }
    }

    pub fn all_ones(t: usize) -> Self {
        AttentionMask {
            t,
            bits: vec![true; (t + 1) * (t + 1)],
        }
    }

    /// Builds a mask from raw row-major bits, `(t+1)*(t+1)` long.
    pub fn from_bits(t: usize, bits: Vec<bool>) -> Result<Self, PermuteError> {
        if bits.len() != (t + 1) * (t + 1) {
            return Err(PermuteError::ContextLength {
                expected: (t + 1) * (t + 1),
                got: bits.len(),
            });
        }
        Ok(AttentionMask { t, bits })
    }

    /// Character count `T`; the matrix is `(T+1) x (T+1)`.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn side(&self) -> usize {
        self.t + 1
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.bits[row * (self.t + 1) + col]
    }

    fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * (self.t + 1) + col] = v;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        let side = self.t + 1;
        &self.bits[row * side..(row + 1) * side]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Flattened copy of the first `rows` rows.
    pub fn rows_flat(&self, rows: usize) -> Vec<bool> {
        self.bits[..rows * (self.t + 1)].to_vec()
    }

    /// Text grid in the layout used throughout: `[B]` heads the columns,
    /// `[E]` closes the rows.
    pub fn render(&self) -> String {
        let t = self.t;
        let mut out = String::new();
        let head: Vec<String> = std::iter::once("[B]".to_string())
            .chain((1..=t).map(|j| format!("y{j}")))
            .collect();
        out.push_str(&format!("{:>5}", ""));
        for h in &head {
            out.push_str(&format!("{h:>5}"));
        }
        out.push('\n');
        for r in 0..=t {
            let label = if r < t {
                format!("y{}", r + 1)
            } else {
                "[E]".to_string()
            };
            out.push_str(&format!("{label:>5}"));
            for c in 0..=t {
                out.push_str(&format!("{:>5}", u8::from(self.allowed(r, c))));
            }
            out.push('\n');
        }
        out
    }
}

/// Draws the K training permutations for sequence length `t`: the
/// left-to-right order, `K/2 - 1` uniform random orders, then the
/// element-reversals of that first half. Duplicates are expected (and
/// harmless) when `t!` is small.
pub fn sample_permutations(
    k: usize,
    t: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Permutation>, PermuteError> {
    if t == 0 {
        return Err(PermuteError::EmptySequence);
    }
    if k != 1 && !k.is_multiple_of(2) {
        return Err(PermuteError::OddPermutationCount(k));
    }
    let mut perms = Vec::with_capacity(k);
    perms.push(Permutation::identity(t));
    if k == 1 {
        return Ok(perms);
    }
    for _ in 0..(k / 2 - 1) {
        let mut order: Vec<usize> = (1..=t).collect();
        rng.shuffle(&mut order);
        perms.push(Permutation { order });
    }
    for i in 0..k / 2 {
        perms.push(perms[i].reversed());
    }
    Ok(perms)
}

/// Mask enforcing the factorization order `z`: the row for `y_{z_t}` sees
/// `[B]` plus the characters earlier in the order.
pub fn mask_from_permutation(z: &Permutation, role: MaskRole) -> AttentionMask {
    mask_from_permutation_padded(z, z.len(), role)
}

/// Same, embedded into a `(full_t+1)` square for batches whose longest
/// label is shorter than the model horizon. Rows at or past `z.len()`
/// (padding targets, and `[E]` for full-length samples) follow the role's
/// `[E]` policy; per-sample context restrictions then trim pad columns.
pub fn mask_from_permutation_padded(
    z: &Permutation,
    full_t: usize,
    role: MaskRole,
) -> AttentionMask {
    debug_assert!(full_t >= z.len());
    let mut mask = AttentionMask::new_zeroed(full_t);
    for (t_idx, &pos) in z.order().iter().enumerate() {
        let row = pos - 1;
        mask.set(row, 0, true);
        for &prev in &z.order()[..t_idx] {
            mask.set(row, prev, true);
        }
    }
    for row in z.len()..=full_t {
        match role {
            MaskRole::RtlPairSecond => mask.set(row, 0, true),
            MaskRole::Interior | MaskRole::LtrPairFirst => {
                for col in 0..=full_t {
                    mask.set(row, col, true);
                }
            }
        }
    }
    mask
}

/// Cloze mask: every character row sees everything except its own column;
/// the `[E]` row sees everything.
pub fn cloze_mask(t: usize) -> AttentionMask {
    let mut mask = AttentionMask::all_ones(t);
    for i in 1..=t {
        mask.set(i - 1, i, false);
    }
    mask
}

/// Zeroes every column whose context id is `[E]` or `[P]`, so nothing
/// conditions on delimiters or padding. Column 0 (`[B]`) is untouched.
pub fn apply_context_restrictions(
    mask: &AttentionMask,
    context_ids: &[usize],
    eos_id: usize,
    pad_id: usize,
) -> Result<AttentionMask, PermuteError> {
    let side = mask.side();
    if context_ids.len() != side {
        return Err(PermuteError::ContextLength {
            expected: side,
            got: context_ids.len(),
        });
    }
    let mut out = mask.clone();
    for (col, &id) in context_ids.iter().enumerate().skip(1) {
        if id == eos_id || id == pad_id {
            for row in 0..side {
                out.set(row, col, false);
            }
        }
    }
    Ok(out)
}
