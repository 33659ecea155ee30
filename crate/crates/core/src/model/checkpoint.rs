//! Checkpoint container: text header (format version, config, named-tensor
//! index with shapes and byte offsets) followed by little-endian f32
//! payloads. Round trips are bit-exact.

use super::{ModelConfig, ModelParams};
use crate::numerics::Tensor;
use std::fmt;
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "PERMREAD-CKPT-V1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Parse(String),
    Mismatch(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "checkpoint io: {e}"),
            Self::Parse(msg) => write!(f, "checkpoint parse: {msg}"),
            Self::Mismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

fn config_lines(cfg: &ModelConfig) -> String {
    format!(
        "image_w={}\nimage_h={}\nchannels={}\npatch_w={}\npatch_h={}\nd_model={}\n\
         enc_depth={}\nenc_heads={}\ndec_heads={}\nd_mlp={}\nmax_label_len={}\n\
         charset_size={}\ndropout_p={}\n",
        cfg.image_w,
        cfg.image_h,
        cfg.channels,
        cfg.patch_w,
        cfg.patch_h,
        cfg.d_model,
        cfg.enc_depth,
        cfg.enc_heads,
        cfg.dec_heads,
        cfg.d_mlp,
        cfg.max_label_len,
        cfg.charset_size,
        cfg.dropout_p,
    )
}

/// Serializes config plus parameters into the container bytes.
pub fn checkpoint_bytes(cfg: &ModelConfig, params: &ModelParams<f32>) -> Vec<u8> {
    let named = params.named();
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&config_lines(cfg));
    header.push_str(&format!("tensors={}\n", named.len()));
    let mut offset = 0usize;
    for (name, t) in &named {
        let bytes = t.numel() * 4;
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{name} {} {offset} {bytes}\n", dims.join(",")));
        offset += bytes;
    }
    header.push_str("DATA\n");
    let mut out = header.into_bytes();
    out.reserve(offset);
    for (_, t) in &named {
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<f32>,
) -> Result<(), CheckpointError> {
    let bytes = checkpoint_bytes(cfg, params);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn parse_kv(line: &str, key: &str) -> Result<String, CheckpointError> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CheckpointError::Parse(format!("expected key=value, got '{line}'")))?;
    if k != key {
        return Err(CheckpointError::Parse(format!(
            "expected key '{key}', got '{k}'"
        )));
    }
    Ok(v.to_string())
}

fn parse_usize(line: &str, key: &str) -> Result<usize, CheckpointError> {
    parse_kv(line, key)?
        .parse()
        .map_err(|e| CheckpointError::Parse(format!("{key}: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<f32>), CheckpointError> {
    let bytes = std::fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(
    bytes: &[u8],
) -> Result<(ModelConfig, ModelParams<f32>), CheckpointError> {
    let data_marker = b"DATA\n";
    let data_pos = bytes
        .windows(data_marker.len())
        .position(|w| w == data_marker)
        .ok_or_else(|| CheckpointError::Parse("missing DATA marker".into()))?;
    let header = std::str::from_utf8(&bytes[..data_pos])
        .map_err(|e| CheckpointError::Parse(e.to_string()))?;
    let payload = &bytes[data_pos + data_marker.len()..];

    let mut lines = header.lines();
    let magic = lines
        .next()
        .ok_or_else(|| CheckpointError::Parse("empty header".into()))?;
    if magic != MAGIC {
        return Err(CheckpointError::Parse(format!(
            "bad magic '{magic}', expected '{MAGIC}'"
        )));
    }
    let mut next = || {
        lines
            .next()
            .ok_or_else(|| CheckpointError::Parse("truncated header".into()))
    };
    let cfg = ModelConfig {
        image_w: parse_usize(next()?, "image_w")?,
        image_h: parse_usize(next()?, "image_h")?,
        channels: parse_usize(next()?, "channels")?,
        patch_w: parse_usize(next()?, "patch_w")?,
        patch_h: parse_usize(next()?, "patch_h")?,
        d_model: parse_usize(next()?, "d_model")?,
        enc_depth: parse_usize(next()?, "enc_depth")?,
        enc_heads: parse_usize(next()?, "enc_heads")?,
        dec_heads: parse_usize(next()?, "dec_heads")?,
        d_mlp: parse_usize(next()?, "d_mlp")?,
        max_label_len: parse_usize(next()?, "max_label_len")?,
        charset_size: parse_usize(next()?, "charset_size")?,
        dropout_p: parse_kv(next()?, "dropout_p")?
            .parse()
            .map_err(|e| CheckpointError::Parse(format!("dropout_p: {e}")))?,
    };
    let count = parse_usize(next()?, "tensors")?;

    let mut params = ModelParams::<f32>::zeros(&cfg)
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    let mut named = params.named_mut();
    if named.len() != count {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint has {count} tensors, model expects {}",
            named.len()
        )));
    }
    for (name, tensor) in named.iter_mut() {
        let line = next()?;
        let mut fields = line.split(' ');
        let (fname, fdims, foff, flen) = (
            fields.next().unwrap_or(""),
            fields.next().unwrap_or(""),
            fields.next().unwrap_or(""),
            fields.next().unwrap_or(""),
        );
        if fname != name {
            return Err(CheckpointError::Mismatch(format!(
                "tensor '{fname}' where '{name}' expected"
            )));
        }
        let dims: Vec<usize> = fdims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CheckpointError::Parse(format!("{name} dims: {e}")))?;
        if dims != tensor.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "tensor '{name}' shape {dims:?}, expected {:?}",
                tensor.shape()
            )));
        }
        let off: usize = foff
            .parse()
            .map_err(|e| CheckpointError::Parse(format!("{name} offset: {e}")))?;
        let len: usize = flen
            .parse()
            .map_err(|e| CheckpointError::Parse(format!("{name} length: {e}")))?;
        if len != tensor.numel() * 4 || off + len > payload.len() {
            return Err(CheckpointError::Mismatch(format!(
                "tensor '{name}' payload range {off}+{len} invalid"
            )));
        }
        let mut values = Vec::with_capacity(tensor.numel());
        for chunk in payload[off..off + len].chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let mut replacement = Tensor::new(values, &dims)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        replacement.set_requires_grad(tensor.requires_grad());
        **tensor = replacement;
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig::tiny64(36);
        let params = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(21)).unwrap();
        let bytes = checkpoint_bytes(&cfg, &params);
        let (cfg2, params2) = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        for ((na, ta), (nb, tb)) in params.named().iter().zip(params2.named().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let ab: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{na}");
        }
        // serialize again: byte-identical
        assert_eq!(bytes, checkpoint_bytes(&cfg2, &params2));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let cfg = ModelConfig::tiny64(36);
        let params = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(2)).unwrap();
        let mut bytes = checkpoint_bytes(&cfg, &params);
        bytes[0] = b'X';
        assert!(matches!(
            load_checkpoint_bytes(&bytes),
            Err(CheckpointError::Parse(_))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join("permread-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let cfg = ModelConfig::tiny64(36);
        let params = ModelParams::<f32>::init(&cfg, &mut SplitMix64::new(5)).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, _) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
