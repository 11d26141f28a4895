//! Binary checkpoints: magic "BDHC", a format version, a length-prefixed
//! JSON metadata record (model config + training step), then named tensor
//! blobs with u64 extents and little-endian f32 payloads. Loading is strict:
//! unknown tensors, missing tensors, or invalid configs are rejected.

use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BDHC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint config rejected: {0}")]
    Config(#[from] crate::model::ModelError),
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    step: u64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

const TENSOR_ORDER: [&str; 6] = [
    "encoder",
    "decoder_x",
    "decoder_y",
    "token_embedding",
    "readout",
    "rope_freqs",
];

fn tensor_of<'a>(params: &'a ModelParams, name: &str) -> &'a Tensor {
    match name {
        "encoder" => &params.encoder,
        "decoder_x" => &params.decoder_x,
        "decoder_y" => &params.decoder_y,
        "token_embedding" => &params.token_embedding,
        "readout" => &params.readout,
        "rope_freqs" => &params.rope_freqs,
        _ => unreachable!(),
    }
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(
    params: &ModelParams,
    step: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        let werr = io_err(&tmp);
        w.write_all(MAGIC).map_err(&werr)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(&werr)?;
        let meta = serde_json::to_vec(&Metadata { config: params.config.clone(), step })
            .expect("metadata serializes");
        w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(&werr)?;
        w.write_all(&meta).map_err(&werr)?;
        w.write_all(&(TENSOR_ORDER.len() as u64).to_le_bytes()).map_err(&werr)?;
        for name in TENSOR_ORDER {
            let t = tensor_of(params, name);
            w.write_all(&(name.len() as u64).to_le_bytes()).map_err(&werr)?;
            w.write_all(name.as_bytes()).map_err(&werr)?;
            w.write_all(&(t.shape().len() as u64).to_le_bytes()).map_err(&werr)?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes()).map_err(&werr)?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes()).map_err(&werr)?;
            }
        }
        w.flush().map_err(&werr)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|e| CheckpointError::Format(format!("truncated file: {e}")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Load and validate a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64), CheckpointError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut ver = [0u8; 4];
    read_exact(&mut r, &mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = read_u64(&mut r)? as usize;
    if meta_len > 1 << 20 {
        return Err(CheckpointError::Format("metadata record too large".into()));
    }
    let mut meta_buf = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta_buf)?;
    let meta: Metadata = serde_json::from_slice(&meta_buf)
        .map_err(|e| CheckpointError::Format(format!("metadata: {e}")))?;
    meta.config.validate()?;

    let count = read_u64(&mut r)? as usize;
    if count == 0 {
        return Err(CheckpointError::Format("empty tensor list".into()));
    }
    let mut tensors: std::collections::HashMap<String, Tensor> = Default::default();
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 256 {
            return Err(CheckpointError::Format("tensor name too long".into()));
        }
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CheckpointError::Format("tensor name not UTF-8".into()))?;
        if !TENSOR_ORDER.contains(&name.as_str()) {
            return Err(CheckpointError::Format(format!("unknown tensor `{name}`")));
        }
        let rank = read_u64(&mut r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Format("tensor rank too large".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 31 {
            return Err(CheckpointError::Format("tensor too large".into()));
        }
        let mut payload = vec![0u8; numel * 4];
        read_exact(&mut r, &mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Format(format!("tensor `{name}`: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Format(format!("duplicate tensor `{name}`")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| CheckpointError::Format(e.to_string()))? != 0 {
        return Err(CheckpointError::Format("trailing bytes after tensor list".into()));
    }

    let cfg = meta.config;
    let mut take = |name: &str, shape: Vec<usize>| -> Result<Tensor, CheckpointError> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::Format(format!("missing tensor `{name}`")))?;
        if t.shape() != shape.as_slice() {
            return Err(CheckpointError::Format(format!(
                "tensor `{name}` has shape {:?}, config wants {:?}",
                t.shape(),
                shape
            )));
        }
        Ok(t)
    };
    let (n, d, h, v) = (cfg.n, cfg.d, cfg.heads, cfg.vocab_size);
    let params = ModelParams {
        encoder: take("encoder", vec![n, d])?,
        decoder_x: take("decoder_x", vec![h, d, n / h])?,
        decoder_y: take("decoder_y", vec![h, d, n / h])?,
        token_embedding: take("token_embedding", vec![v, d])?,
        readout: take("readout", vec![d, v])?,
        rope_freqs: take("rope_freqs", vec![h, n / (2 * h)])?,
        config: cfg,
    };
    Ok((params, meta.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn params() -> ModelParams {
        let cfg = ModelConfig {
            n: 32,
            d: 4,
            layers: 2,
            heads: 2,
            vocab_size: 11,
            dropout: 0.1,
            rope_wavelength_range: (1.0, 32.0),
            alibi_gamma: 0.9,
            eps: 1e-5,
        };
        init_params(&cfg, 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        let p = params();
        save_checkpoint(&p, 1234, &path).unwrap();
        let (q, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 1234);
        assert_eq!(p.config, q.config);
        for name in TENSOR_ORDER {
            assert_eq!(tensor_of(&p, name).data(), tensor_of(&q, name).data(), "{name}");
        }
    }

    #[test]
    fn file_starts_with_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        save_checkpoint(&params(), 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"BDHC");
        assert_eq!(&bytes[..4], &[0x42, 0x44, 0x48, 0x43]);
    }

    #[test]
    fn truncation_is_a_format_error_not_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        save_checkpoint(&params(), 9, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let short = dir.path().join("short.bdhc");
            std::fs::write(&short, &bytes[..cut]).unwrap();
            match load_checkpoint(&short) {
                Err(CheckpointError::Format(_)) | Err(CheckpointError::BadMagic) => {}
                other => panic!("cut {cut}: expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        save_checkpoint(&params(), 9, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn invalid_config_in_metadata_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        let mut p = params();
        p.config.n = 33; // 33 % 2 heads != 0
        save_checkpoint(&p, 0, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Config(_))));
    }

    #[test]
    fn unknown_tensor_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bdhc");
        save_checkpoint(&params(), 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Rewrite the first tensor name ("encoder") in place.
        let pos = bytes.windows(7).position(|w| w == b"encoder").unwrap();
        bytes[pos..pos + 7].copy_from_slice(b"enc0der");
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::Format(msg)) => assert!(msg.contains("unknown tensor")),
            other => panic!("expected unknown-tensor error, got {other:?}"),
        }
    }
}
