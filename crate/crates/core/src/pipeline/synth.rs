//! Deterministic synthetic corpus renderer.
//!
//! Labels are drawn on a grayscale canvas with a built-in 5x7 bitmap font
//! (the classic LCD/LED column-encoded glyph set covering the 94 printable
//! ASCII characters), with seeded jitter in position, integer scale, and
//! polarity. The same seed always produces a byte-identical corpus.

use super::{ManifestRow, PipelineError, SampleManifest};
use crate::rng::SplitMix64;
use crate::textcodec::Charset;
use std::path::Path;

/// Column-encoded 5x7 glyphs for ASCII `!`..=`~`; bit 0 is the top row.
#[rustfmt::skip]
const FONT_5X7: [[u8; 5]; 94] = [
    [0x00, 0x00, 0x5F, 0x00, 0x00], // !
    [0x00, 0x07, 0x00, 0x07, 0x00], // "
    [0x14, 0x7F, 0x14, 0x7F, 0x14], // #
    [0x24, 0x2A, 0x7F, 0x2A, 0x12], // $
    [0x23, 0x13, 0x08, 0x64, 0x62], // %
    [0x36, 0x49, 0x55, 0x22, 0x50], // &
    [0x00, 0x05, 0x03, 0x00, 0x00], // '
    [0x00, 0x1C, 0x22, 0x41, 0x00], // (
    [0x00, 0x41, 0x22, 0x1C, 0x00], // )
    [0x08, 0x2A, 0x1C, 0x2A, 0x08], // *
    [0x08, 0x08, 0x3E, 0x08, 0x08], // +
    [0x00, 0x50, 0x30, 0x00, 0x00], // ,
    [0x08, 0x08, 0x08, 0x08, 0x08], // -
    [0x00, 0x60, 0x60, 0x00, 0x00], // .
    [0x20, 0x10, 0x08, 0x04, 0x02], // /
    [0x3E, 0x51, 0x49, 0x45, 0x3E], // 0
    [0x00, 0x42, 0x7F, 0x40, 0x00], // 1
    [0x42, 0x61, 0x51, 0x49, 0x46], // 2
    [0x21, 0x41, 0x45, 0x4B, 0x31], // 3
    [0x18, 0x14, 0x12, 0x7F, 0x10], // 4
    [0x27, 0x45, 0x45, 0x45, 0x39], // 5
    [0x3C, 0x4A, 0x49, 0x49, 0x30], // 6
    [0x01, 0x71, 0x09, 0x05, 0x03], // 7
    [0x36, 0x49, 0x49, 0x49, 0x36], // 8
    [0x06, 0x49, 0x49, 0x29, 0x1E], // 9
    [0x00, 0x36, 0x36, 0x00, 0x00], // :
    [0x00, 0x56, 0x36, 0x00, 0x00], // ;
    [0x00, 0x08, 0x14, 0x22, 0x41], // <
    [0x14, 0x14, 0x14, 0x14, 0x14], // =
    [0x41, 0x22, 0x14, 0x08, 0x00], // >
    [0x02, 0x01, 0x51, 0x09, 0x06], // ?
    [0x32, 0x49, 0x79, 0x41, 0x3E], // @
    [0x7E, 0x11, 0x11, 0x11, 0x7E], // A
    [0x7F, 0x49, 0x49, 0x49, 0x36], // B
    [0x3E, 0x41, 0x41, 0x41, 0x22], // C
    [0x7F, 0x41, 0x41, 0x22, 0x1C], // D
    [0x7F, 0x49, 0x49, 0x49, 0x41], // E
    [0x7F, 0x09, 0x09, 0x09, 0x01], // F
    [0x3E, 0x41, 0x49, 0x49, 0x7A], // G
    [0x7F, 0x08, 0x08, 0x08, 0x7F], // H
    [0x00, 0x41, 0x7F, 0x41, 0x00], // I
    [0x20, 0x40, 0x41, 0x3F, 0x01], // J
    [0x7F, 0x08, 0x14, 0x22, 0x41], // K
    [0x7F, 0x40, 0x40, 0x40, 0x40], // L
    [0x7F, 0x02, 0x0C, 0x02, 0x7F], // M
    [0x7F, 0x04, 0x08, 0x10, 0x7F], // N
    [0x3E, 0x41, 0x41, 0x41, 0x3E], // O
    [0x7F, 0x09, 0x09, 0x09, 0x06], // P
    [0x3E, 0x41, 0x51, 0x21, 0x5E], // Q
    [0x7F, 0x09, 0x19, 0x29, 0x46], // R
    [0x46, 0x49, 0x49, 0x49, 0x31], // S
    [0x01, 0x01, 0x7F, 0x01, 0x01], // T
    [0x3F, 0x40, 0x40, 0x40, 0x3F], // U
    [0x1F, 0x20, 0x40, 0x20, 0x1F], // V
    [0x3F, 0x40, 0x38, 0x40, 0x3F], // W
    [0x63, 0x14, 0x08, 0x14, 0x63], // X
    [0x07, 0x08, 0x70, 0x08, 0x07], // Y
    [0x61, 0x51, 0x49, 0x45, 0x43], // Z
    [0x00, 0x7F, 0x41, 0x41, 0x00], // [
    [0x02, 0x04, 0x08, 0x10, 0x20], // backslash
    [0x00, 0x41, 0x41, 0x7F, 0x00], // ]
    [0x04, 0x02, 0x01, 0x02, 0x04], // ^
    [0x40, 0x40, 0x40, 0x40, 0x40], // _
    [0x00, 0x01, 0x02, 0x04, 0x00], // `
    [0x20, 0x54, 0x54, 0x54, 0x78], // a
    [0x7F, 0x48, 0x44, 0x44, 0x38], // b
    [0x38, 0x44, 0x44, 0x44, 0x20], // c
    [0x38, 0x44, 0x44, 0x48, 0x7F], // d
    [0x38, 0x54, 0x54, 0x54, 0x18], // e
    [0x08, 0x7E, 0x09, 0x01, 0x02], // f
    [0x0C, 0x52, 0x52, 0x52, 0x3E], // g
    [0x7F, 0x08, 0x04, 0x04, 0x78], // h
    [0x00, 0x44, 0x7D, 0x40, 0x00], // i
    [0x20, 0x40, 0x44, 0x3D, 0x00], // j
    [0x7F, 0x10, 0x28, 0x44, 0x00], // k
    [0x00, 0x41, 0x7F, 0x40, 0x00], // l
    [0x7C, 0x04, 0x18, 0x04, 0x78], // m
    [0x7C, 0x08, 0x04, 0x04, 0x78], // n
    [0x38, 0x44, 0x44, 0x44, 0x38], // o
    [0x7C, 0x14, 0x14, 0x14, 0x08], // p
    [0x08, 0x14, 0x14, 0x18, 0x7C], // q
    [0x7C, 0x08, 0x04, 0x04, 0x08], // r
    [0x48, 0x54, 0x54, 0x54, 0x20], // s
    [0x04, 0x3F, 0x44, 0x40, 0x20], // t
    [0x3C, 0x40, 0x40, 0x20, 0x7C], // u
    [0x1C, 0x20, 0x40, 0x20, 0x1C], // v
    [0x3C, 0x40, 0x30, 0x40, 0x3C], // w
    [0x44, 0x28, 0x10, 0x28, 0x44], // x
    [0x0C, 0x50, 0x50, 0x50, 0x3C], // y
    [0x44, 0x64, 0x54, 0x4C, 0x44], // z
    [0x00, 0x08, 0x36, 0x41, 0x00], // {
    [0x00, 0x00, 0x7F, 0x00, 0x00], // |
    [0x00, 0x41, 0x36, 0x08, 0x00], // }
    [0x08, 0x04, 0x08, 0x10, 0x08], // ~
];

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
/// Advance per character in glyph units (5 columns + 1 spacing column).
const ADVANCE: usize = GLYPH_W + 1;

/// Glyph columns for a printable ASCII character, if one exists.
pub fn glyph_for(c: char) -> Option<&'static [u8; 5]> {
    let code = c as usize;
    if (0x21..=0x7E).contains(&code) {
        Some(&FONT_5X7[code - 0x21])
    } else {
        None
    }
}

fn text_width(len: usize, scale: usize) -> usize {
    len * ADVANCE * scale - scale // no trailing spacing column
}

/// Renders one label onto a `w x h` grayscale canvas with seeded jitter:
/// integer scale 1 or 2 (when it fits), random offset, random polarity.
pub fn render_label_canvas(
    label: &str,
    w: usize,
    h: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<u8>, PipelineError> {
    let chars: Vec<char> = label.chars().collect();
    if chars.is_empty() {
        return Err(PipelineError::Data("cannot render an empty label".into()));
    }
    for &c in &chars {
        if glyph_for(c).is_none() {
            return Err(PipelineError::Data(format!(
                "no glyph for character {c:?}"
            )));
        }
    }
    let fits = |scale: usize| text_width(chars.len(), scale) <= w && GLYPH_H * scale <= h;
    if !fits(1) {
        return Err(PipelineError::Data(format!(
            "label '{label}' does not fit a {w}x{h} canvas"
        )));
    }
    let scale = if fits(2) && rng.below(2) == 1 { 2 } else { 1 };
    let tw = text_width(chars.len(), scale);
    let th = GLYPH_H * scale;
    let x0 = rng.below(w - tw + 1);
    let y0 = rng.below(h - th + 1);
    let (bg, fg) = if rng.below(2) == 0 { (235, 20) } else { (20, 235) };

    let mut canvas = vec![bg; w * h];
    for (ci, &c) in chars.iter().enumerate() {
        let glyph = glyph_for(c).expect("checked above");
        let gx0 = x0 + ci * ADVANCE * scale;
        for (col, &bits) in glyph.iter().enumerate() {
            for row in 0..GLYPH_H {
                if bits & (1 << row) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let x = gx0 + col * scale + sx;
                            let y = y0 + row * scale + sy;
                            canvas[y * w + x] = fg;
                        }
                    }
                }
            }
        }
    }
    Ok(canvas)
}

/// Uniform random labels over the charset with lengths in
/// `[min_len, max_len]`.
pub fn random_labels(
    count: usize,
    charset: &Charset,
    min_len: usize,
    max_len: usize,
    rng: &mut SplitMix64,
) -> Vec<String> {
    assert!(min_len >= 1 && min_len <= max_len);
    (0..count)
        .map(|_| {
            let len = min_len + rng.below(max_len - min_len + 1);
            (0..len)
                .map(|_| charset.chars()[rng.below(charset.size())])
                .collect()
        })
        .collect()
}

/// Renders a whole corpus: one PGM per label plus `manifest.tsv` in
/// `out_dir`. Returns the loaded manifest.
pub fn render_synthetic(
    labels: &[String],
    canvas_w: usize,
    canvas_h: usize,
    rng: &mut SplitMix64,
    out_dir: &Path,
) -> Result<SampleManifest, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(out_dir.to_path_buf(), e))?;
    let mut rows = Vec::with_capacity(labels.len());
    let mut manifest_text = String::new();
    for (i, label) in labels.iter().enumerate() {
        let canvas = render_label_canvas(label, canvas_w, canvas_h, rng)?;
        let rel = format!("img_{i:05}.pgm");
        super::write_pgm(&out_dir.join(&rel), canvas_w, canvas_h, &canvas)?;
        manifest_text.push_str(&format!("{rel}\t{label}\n"));
        rows.push(ManifestRow {
            rel_path: rel,
            label: label.clone(),
        });
    }
    let manifest_path = out_dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest_text)
        .map_err(|e| PipelineError::Io(manifest_path, e))?;
    Ok(SampleManifest {
        base_dir: out_dir.to_path_buf(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::SampleManifest;
    use super::*;
    use crate::textcodec::{preprocess_label, Charset};

    #[test]
    fn glyphs_exist_and_are_pairwise_distinct() {
        let cs = Charset::slice(94).unwrap();
        let mut seen: Vec<([u8; 5], char)> = Vec::new();
        for &c in cs.chars() {
            let g = *glyph_for(c).unwrap_or_else(|| panic!("missing glyph {c:?}"));
            if let Some((_, other)) = seen.iter().find(|(b, _)| *b == g) {
                panic!("glyphs for {c:?} and {other:?} collide");
            }
            seen.push((g, c));
        }
        assert!(glyph_for(' ').is_none());
        assert!(glyph_for('é').is_none());
    }

    #[test]
    fn render_is_seed_deterministic() {
        let mut a = SplitMix64::new(9);
        let mut b = SplitMix64::new(9);
        let ca = render_label_canvas("abc0", 64, 16, &mut a).unwrap();
        let cb = render_label_canvas("abc0", 64, 16, &mut b).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn render_rejects_glyphless_and_oversized() {
        let mut rng = SplitMix64::new(1);
        assert!(render_label_canvas("a b", 64, 16, &mut rng).is_err());
        let long: String = std::iter::repeat_n('w', 20).collect();
        assert!(render_label_canvas(&long, 64, 16, &mut rng).is_err());
    }

    #[test]
    fn corpus_roundtrip_and_labels_survive_preprocessing() {
        let dir = std::env::temp_dir().join("permread-synth-test");
        std::fs::remove_dir_all(&dir).ok();
        let charset = Charset::slice(36).unwrap();
        let mut rng = SplitMix64::new(3);
        let labels = random_labels(12, &charset, 1, 8, &mut rng);
        let manifest = render_synthetic(&labels, 64, 16, &mut rng, &dir).unwrap();
        assert_eq!(manifest.rows.len(), 12);
        for row in &manifest.rows {
            let p = preprocess_label(&row.label, &charset, 8).unwrap();
            assert_eq!(p, row.label);
        }
        let reloaded = SampleManifest::load(&dir.join("manifest.tsv")).unwrap();
        assert_eq!(reloaded.rows.len(), 12);
        for (a, b) in reloaded.rows.iter().zip(&manifest.rows) {
            assert_eq!(a, b);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn same_seed_same_corpus_bytes() {
        let d1 = std::env::temp_dir().join("permread-synth-b1");
        let d2 = std::env::temp_dir().join("permread-synth-b2");
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
        let charset = Charset::slice(36).unwrap();
        for d in [&d1, &d2] {
            let mut rng = SplitMix64::new(77);
            let labels = random_labels(5, &charset, 2, 6, &mut rng);
            render_synthetic(&labels, 64, 16, &mut rng, d).unwrap();
        }
        for i in 0..5 {
            let f = format!("img_{i:05}.pgm");
            let a = std::fs::read(d1.join(&f)).unwrap();
            let b = std::fs::read(d2.join(&f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }
}
