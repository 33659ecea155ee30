//! Character set, label preprocessing, and token encode/decode.
//!
//! The canonical 94-character alphabet is ordered digits, lowercase,
//! uppercase, then the 32 ASCII punctuation marks in codepoint order; the
//! 36- and 62-character sets are exact prefixes. Special ids sit after the
//! characters: `[E] = S`, `[B] = S+1`, `[P] = S+2`, so an output head of
//! width `S+1` covers exactly characters plus `[E]`.

use std::fmt;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    UnsupportedCharsetSize(usize),
    /// Character that should have been removed by preprocessing.
    CharOutsideCharset(char),
    /// Label longer than the configured maximum.
    LabelTooLong { len: usize, max: usize },
    /// A non-character id (other than `[E]`) surfaced in decoder output.
    MalformedSequence { id: usize, position: usize },
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnsupportedCharsetSize(s) => {
                write!(f, "unsupported charset size {s} (expected 36, 62, or 94)")
            }
            Self::CharOutsideCharset(c) => write!(f, "character {c:?} outside charset"),
            Self::LabelTooLong { len, max } => {
                write!(f, "label length {len} exceeds maximum {max}")
            }
            Self::MalformedSequence { id, position } => {
                write!(f, "non-character id {id} at position {position} before [E]")
            }
        }
    }
}

impl std::error::Error for CodecError {}

/// Why a raw label was rejected; a normal preprocessing outcome, not a
/// failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    Empty,
    TooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseMode {
    Lower,
    Upper,
    Mixed,
}

/// The canonical 94-character ordering.
pub fn canonical_94() -> Vec<char> {
    let mut chars: Vec<char> = Vec::with_capacity(94);
    chars.extend('0'..='9');
    chars.extend('a'..='z');
    chars.extend('A'..='Z');
    // ASCII punctuation in codepoint order.
    chars.extend('!'..='/');
    chars.extend(':'..='@');
    chars.extend('['..='`');
    chars.extend('{'..='~');
    chars
}

/// Ordered alphabet with a derived case mode.
#[derive(Debug, Clone)]
pub struct Charset {
    chars: Vec<char>,
    ids: [Option<u8>; 128],
    case_mode: CaseMode,
}

impl Charset {
    /// Prefix slice of the canonical ordering; size must be 36, 62, or 94.
    pub fn slice(size: usize) -> Result<Self, CodecError> {
        if !matches!(size, 36 | 62 | 94) {
            return Err(CodecError::UnsupportedCharsetSize(size));
        }
        Ok(Self::from_chars(canonical_94()[..size].to_vec()))
    }

    /// Arbitrary ASCII alphabet (used by tests and tools, not the CLI).
    pub fn from_chars(chars: Vec<char>) -> Self {
        let mut ids = [None; 128];
        for (i, &c) in chars.iter().enumerate() {
            ids[c as usize] = Some(i as u8);
        }
        let has_lower = chars.iter().any(|c| c.is_ascii_lowercase());
        let has_upper = chars.iter().any(|c| c.is_ascii_uppercase());
        let case_mode = match (has_lower, has_upper) {
            (true, true) => CaseMode::Mixed,
            (false, true) => CaseMode::Upper,
            _ => CaseMode::Lower,
        };
        Charset {
            chars,
            ids,
            case_mode,
        }
    }

    pub fn size(&self) -> usize {
        self.chars.len()
    }

    pub fn case_mode(&self) -> CaseMode {
        self.case_mode
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        if (c as usize) < 128 {
            self.ids[c as usize].map(|v| v as usize)
        } else {
            None
        }
    }

    pub fn char_at(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }
}

/// Charset plus special-token ids and the maximum label length `T`.
#[derive(Debug, Clone)]
pub struct TokenCodec {
    charset: Charset,
    max_len: usize,
}

impl TokenCodec {
    pub fn new(charset: Charset, max_len: usize) -> Self {
        TokenCodec { charset, max_len }
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    /// Maximum character count `T`.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn eos_id(&self) -> usize {
        self.charset.size()
    }

    pub fn bos_id(&self) -> usize {
        self.charset.size() + 1
    }

    pub fn pad_id(&self) -> usize {
        self.charset.size() + 2
    }

    /// Output-head width: characters plus `[E]`.
    pub fn num_classes(&self) -> usize {
        self.charset.size() + 1
    }

    /// Embedding-table height: characters plus `[E]`, `[B]`, `[P]`.
    pub fn embed_rows(&self) -> usize {
        self.charset.size() + 3
    }
}

/// Label padded to fixed length: decoder context (leading `[B]`) and
/// training targets (trailing `[E]`), both `T+1` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedLabel {
    pub context_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub len: usize,
}

/// Normalizes a raw label: strip whitespace, NFKD-decompose and drop
/// non-ASCII, case-fold per the charset, drop out-of-charset characters.
/// Labels that end up empty or longer than `max_len` are rejected.
pub fn preprocess_label(raw: &str, charset: &Charset, max_len: usize) -> Result<String, Reject> {
    let no_ws: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    let ascii: String = no_ws.nfkd().filter(char::is_ascii).collect();
    let cased: String = match charset.case_mode() {
        CaseMode::Lower => ascii.to_lowercase(),
        CaseMode::Upper => ascii.to_uppercase(),
        CaseMode::Mixed => ascii,
    };
    let kept: String = cased.chars().filter(|&c| charset.id_of(c).is_some()).collect();
    if kept.is_empty() {
        Err(Reject::Empty)
    } else if kept.chars().count() > max_len {
        Err(Reject::TooLong)
    } else {
        Ok(kept)
    }
}

/// Encodes a preprocessed label into fixed-length context/target sequences.
pub fn encode_label(label: &str, codec: &TokenCodec) -> Result<EncodedLabel, CodecError> {
    let t = codec.max_len();
    let mut char_ids = Vec::with_capacity(label.len());
    for c in label.chars() {
        char_ids.push(
            codec
                .charset()
                .id_of(c)
                .ok_or(CodecError::CharOutsideCharset(c))?,
        );
    }
    let len = char_ids.len();
    if len > t {
        return Err(CodecError::LabelTooLong { len, max: t });
    }
    let mut context_ids = Vec::with_capacity(t + 1);
    context_ids.push(codec.bos_id());
    context_ids.extend_from_slice(&char_ids);
    context_ids.resize(t + 1, codec.pad_id());
    let mut target_ids = Vec::with_capacity(t + 1);
    target_ids.extend_from_slice(&char_ids);
    target_ids.push(codec.eos_id());
    target_ids.resize(t + 1, codec.pad_id());
    Ok(EncodedLabel {
        context_ids,
        target_ids,
        len,
    })
}

/// Maps ids back to text, stopping before the first `[E]`. Ids that are
/// neither characters nor `[E]` are malformed if they appear first.
pub fn decode_ids(ids: &[usize], codec: &TokenCodec) -> Result<String, CodecError> {
    let mut out = String::new();
    for (position, &id) in ids.iter().enumerate() {
        if id == codec.eos_id() {
            break;
        }
        match codec.charset().char_at(id) {
            Some(c) => out.push(c),
            None => return Err(CodecError::MalformedSequence { id, position }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_ordering_pins() {
        let cs = canonical_94();
        assert_eq!(cs.len(), 94);
        assert_eq!(cs[0], '0');
        assert_eq!(cs[9], '9');
        assert_eq!(cs[10], 'a');
        assert_eq!(cs[35], 'z');
        assert_eq!(cs[36], 'A');
        assert_eq!(cs[61], 'Z');
        assert_eq!(cs[62], '!');
        assert_eq!(cs[93], '~');
        // punctuation block is the 32 ASCII marks in codepoint order
        let punct: Vec<char> = cs[62..].to_vec();
        let mut sorted = punct.clone();
        sorted.sort_unstable();
        assert_eq!(punct, sorted);
        assert_eq!(punct.len(), 32);
    }

    #[test]
    fn slices_are_prefixes() {
        let full = Charset::slice(94).unwrap();
        for size in [36usize, 62] {
            let cs = Charset::slice(size).unwrap();
            assert_eq!(cs.chars(), &full.chars()[..size]);
        }
        assert_eq!(Charset::slice(36).unwrap().case_mode(), CaseMode::Lower);
        assert_eq!(Charset::slice(62).unwrap().case_mode(), CaseMode::Mixed);
        assert_eq!(Charset::slice(94).unwrap().case_mode(), CaseMode::Mixed);
        assert!(matches!(
            Charset::slice(50),
            Err(CodecError::UnsupportedCharsetSize(50))
        ));
    }

    #[test]
    fn specials_never_collide_with_characters() {
        let codec = TokenCodec::new(Charset::slice(94).unwrap(), 25);
        assert_eq!(codec.eos_id(), 94);
        assert_eq!(codec.bos_id(), 95);
        assert_eq!(codec.pad_id(), 96);
        assert_eq!(codec.num_classes(), 95);
        assert_eq!(codec.embed_rows(), 97);
    }

    #[test]
    fn preprocess_strips_whitespace() {
        let cs = Charset::slice(94).unwrap();
        assert_eq!(preprocess_label("a b", &cs, 25).unwrap(), "ab");
        assert_eq!(preprocess_label("a\tb\nc", &cs, 25).unwrap(), "abc");
    }

    #[test]
    fn preprocess_nfkd_to_ascii() {
        let cs = Charset::slice(94).unwrap();
        // NFKD decomposes the accented letter into base + combining mark;
        // the mark is non-ASCII and dropped.
        assert_eq!(preprocess_label("héllo", &cs, 25).unwrap(), "hello");
        assert_eq!(preprocess_label("ﬁn", &cs, 25).unwrap(), "fin");
    }

    #[test]
    fn preprocess_case_folds_for_36() {
        let cs = Charset::slice(36).unwrap();
        assert_eq!(preprocess_label("MiXeD", &cs, 25).unwrap(), "mixed");
        let mixed = Charset::slice(62).unwrap();
        assert_eq!(preprocess_label("MiXeD", &mixed, 25).unwrap(), "MiXeD");
    }

    #[test]
    fn preprocess_rejections() {
        let cs = Charset::slice(36).unwrap();
        let long: String = std::iter::repeat_n('a', 26).collect();
        assert_eq!(preprocess_label(&long, &cs, 25), Err(Reject::TooLong));
        assert_eq!(preprocess_label("   ", &cs, 25), Err(Reject::Empty));
        assert_eq!(preprocess_label("€•", &cs, 25), Err(Reject::Empty));
    }

    #[test]
    fn encode_ab_pins() {
        let codec = TokenCodec::new(Charset::slice(94).unwrap(), 4);
        let e = encode_label("ab", &codec).unwrap();
        let (bos, eos, pad) = (codec.bos_id(), codec.eos_id(), codec.pad_id());
        assert_eq!(e.context_ids, vec![bos, 10, 11, pad, pad]);
        assert_eq!(e.target_ids, vec![10, 11, eos, pad, pad]);
        assert_eq!(e.len, 2);
    }

    #[test]
    fn encode_digit_zero() {
        let codec = TokenCodec::new(Charset::slice(94).unwrap(), 2);
        let e = encode_label("0", &codec).unwrap();
        assert_eq!(e.context_ids, vec![codec.bos_id(), 0, codec.pad_id()]);
        assert_eq!(e.target_ids, vec![0, codec.eos_id(), codec.pad_id()]);
    }

    #[test]
    fn decode_truncates_at_eos() {
        let codec = TokenCodec::new(Charset::slice(94).unwrap(), 4);
        let eos = codec.eos_id();
        assert_eq!(decode_ids(&[10, 11, eos, 10], &codec).unwrap(), "ab");
        assert_eq!(decode_ids(&[eos, 10, 11], &codec).unwrap(), "");
        assert_eq!(decode_ids(&[10, 11], &codec).unwrap(), "ab");
        let err = decode_ids(&[10, codec.pad_id(), eos], &codec).unwrap_err();
        assert!(matches!(err, CodecError::MalformedSequence { position: 1, .. }));
    }

    proptest! {
        #[test]
        fn roundtrip_and_target_count(seed in 0u64..5000) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let charset = Charset::slice(36).unwrap();
            let codec = TokenCodec::new(charset.clone(), 12);
            let len = 1 + rng.below(12);
            let label: String = (0..len)
                .map(|_| charset.chars()[rng.below(36)])
                .collect();
            let enc = encode_label(&label, &codec).unwrap();
            prop_assert_eq!(decode_ids(&enc.target_ids, &codec).unwrap(), label.clone());
            let non_pad = enc.target_ids.iter().filter(|&&i| i != codec.pad_id()).count();
            prop_assert_eq!(non_pad, enc.len + 1);
        }

        #[test]
        fn preprocess_idempotent(raw in "\\PC{0,40}") {
            let cs = Charset::slice(62).unwrap();
            if let Ok(once) = preprocess_label(&raw, &cs, 25) {
                let twice = preprocess_label(&once, &cs, 25).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
