//! Binary PGM (P5) and PPM (P6) parsing, writing, and bilinear resize into
//! the normalized model input.

use super::PipelineError;
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use std::io::Write;
use std::path::Path;

/// Decoded 8-bit image, row-major `h x w x channels`.
#[derive(Debug, Clone)]
pub struct RawImage {
    pub w: usize,
    pub h: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn data_err(what: &str, detail: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{what}: {detail}"))
}

/// Parses binary netpbm bytes (P5 grayscale or P6 RGB, maxval <= 255).
pub fn parse_netpbm(bytes: &[u8], what: &str) -> Result<RawImage, PipelineError> {
    let mut pos = 0usize;
    let magic = bytes.get(0..2).ok_or_else(|| data_err(what, "truncated magic"))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(data_err(what, "not a binary PGM (P5) or PPM (P6)")),
    };
    pos += 2;

    // Header tokens separated by whitespace; '#' starts a comment.
    let next_token = |pos: &mut usize| -> Result<usize, PipelineError> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(data_err(what, "malformed header token"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .expect("digits are utf8")
            .parse()
            .map_err(|e| data_err(what, e))
    };

    let w = next_token(&mut pos)?;
    let h = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if w == 0 || h == 0 {
        return Err(data_err(what, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(data_err(what, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte before the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(data_err(what, "missing delimiter before pixel data"));
    }
    pos += 1;
    let need = w * h * channels;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| data_err(what, format!("expected {need} pixel bytes")))?;
    Ok(RawImage {
        w,
        h,
        channels,
        data: payload.to_vec(),
    })
}

pub fn read_netpbm(path: &Path) -> Result<RawImage, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Io(path.to_path_buf(), e))?;
    parse_netpbm(&bytes, &path.display().to_string())
}

/// Writes a binary PGM (P5).
pub fn write_pgm(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<(), PipelineError> {
    assert_eq!(data.len(), w * h);
    let mut f =
        std::fs::File::create(path).map_err(|e| PipelineError::Io(path.to_path_buf(), e))?;
    let header = format!("P5\n{w} {h}\n255\n");
    f.write_all(header.as_bytes())
        .and_then(|_| f.write_all(data))
        .map_err(|e| PipelineError::Io(path.to_path_buf(), e))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize (aspect ratio ignored) to the configured extents,
/// channel adaptation, and linear normalization: byte 0 maps to -1.0 and
/// byte 255 to +1.0 exactly.
pub fn resize_to_model_input<E: Scalar>(img: &RawImage, cfg: &ModelConfig) -> Vec<E> {
    let (dw, dh, dc) = (cfg.image_w, cfg.image_h, cfg.channels);
    let (sw, sh, sc) = (img.w, img.h, img.channels);
    let sample = |x: usize, y: usize, c: usize| -> f64 {
        let v = img.data[(y * sw + x) * sc + c];
        v as f64
    };
    let mut out = Vec::with_capacity(dw * dh * dc);
    for dy in 0..dh {
        let sy = ((dy as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = sy - y0 as f64;
        for dx in 0..dw {
            let sx = ((dx as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = sx - x0 as f64;
            let mut px = [0.0f64; 3];
            for (c, slot) in px.iter_mut().take(sc).enumerate() {
                let top = lerp(sample(x0, y0, c), sample(x1, y0, c), tx);
                let bot = lerp(sample(x0, y1, c), sample(x1, y1, c), tx);
                *slot = lerp(top, bot, ty);
            }
            // channel adaptation: replicate gray to RGB, average RGB to gray
            for c in 0..dc {
                let v = match (sc, dc) {
                    (1, _) => px[0],
                    (3, 1) => (px[0] + px[1] + px[2]) / 3.0,
                    _ => px[c],
                };
                out.push(E::from_f64(2.0 * (v / 255.0) - 1.0));
            }
        }
    }
    out
}
