//! Binary checkpoint format for [`SelectorParams`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MTOOLSEL"
//! 8       4     version (u32, currently 1)
//! 12      4     dim (u32)
//! 16      4     hidden_dim (u32)
//! 20      4     ngram_length (u32)
//! 24      8     init seed (u64)
//! 32      ...   w1, row-major [hidden_dim][input_dim], f64 each
//! ...     ...   b1 [hidden_dim] f64
//! ...     ...   w2 [hidden_dim] f64
//! ...     8     b2 f64
//! ```
//!
//! `w1` is transposed on save: memory keeps it column-major for sparse
//! updates, the file keeps the conventional row-major order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::featurizer::ModelConfig;
use super::scorer::SelectorParams;

pub const MAGIC: &[u8; 8] = b"MTOOLSEL";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic; not a selector checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint declares a zero dimension")]
    ZeroShape,
    #[error("checkpoint is {actual} bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn expected_len(dim: usize, hidden_dim: usize) -> usize {
    let input_dim = 3 * dim;
    32 + 8 * (input_dim * hidden_dim + hidden_dim + hidden_dim + 1)
}

/// Serializes the checkpoint to its exact on-disk byte sequence.
pub fn checkpoint_bytes(params: &SelectorParams) -> Vec<u8> {
    let config = &params.config;
    let input_dim = config.input_dim();
    let mut out = Vec::with_capacity(expected_len(config.dim, config.hidden_dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.dim as u32).to_le_bytes());
    out.extend_from_slice(&(config.hidden_dim as u32).to_le_bytes());
    out.extend_from_slice(&(config.ngram_length as u32).to_le_bytes());
    out.extend_from_slice(&params.seed.to_le_bytes());
    for i in 0..config.hidden_dim {
        for j in 0..input_dim {
            out.extend_from_slice(&params.w1[j * config.hidden_dim + i].to_le_bytes());
        }
    }
    for &b in &params.b1 {
        out.extend_from_slice(&b.to_le_bytes());
    }
    for &w in &params.w2 {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&params.b2.to_le_bytes());
    out
}

pub fn save_checkpoint(params: &SelectorParams, path: &Path) -> Result<(), CheckpointError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&checkpoint_bytes(params))?;
    writer.flush()?;
    Ok(())
}

/// Parses a checkpoint from raw bytes, verifying magic, version, and the
/// exact length implied by the header shape.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<SelectorParams, CheckpointError> {
    if bytes.len() < 32 {
        return Err(CheckpointError::BadMagic);
    }
    if &bytes[0..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = read_u32(8);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dim = read_u32(12) as usize;
    let hidden_dim = read_u32(16) as usize;
    let ngram_length = read_u32(20) as usize;
    if dim == 0 || hidden_dim == 0 || ngram_length == 0 {
        return Err(CheckpointError::ZeroShape);
    }
    let expected = expected_len(dim, hidden_dim);
    if bytes.len() != expected {
        return Err(CheckpointError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());

    let input_dim = 3 * dim;
    let mut at = 32;
    let mut read_f64 = || {
        let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        v
    };
    let mut w1 = vec![0.0f64; input_dim * hidden_dim];
    for i in 0..hidden_dim {
        for j in 0..input_dim {
            w1[j * hidden_dim + i] = read_f64();
        }
    }
    let b1: Vec<f64> = (0..hidden_dim).map(|_| read_f64()).collect();
    let w2: Vec<f64> = (0..hidden_dim).map(|_| read_f64()).collect();
    let b2 = read_f64();

    Ok(SelectorParams {
        config: ModelConfig {
            dim,
            hidden_dim,
            ngram_length,
        },
        seed,
        w1,
        b1,
        w2,
        b2,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<SelectorParams, CheckpointError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

/// Human-readable dump of the same state: pretty JSON with full f64
/// round-trip precision. For inspection and diffs, not for loading.
pub fn export_text(params: &SelectorParams) -> String {
    serde_json::to_string_pretty(params).expect("params serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SelectorParams {
        SelectorParams::init(
            &ModelConfig {
                dim: 16,
                hidden_dim: 4,
                ngram_length: 3,
            },
            42,
        )
    }

    #[test]
    fn round_trip_preserves_everything() {
        let original = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.ckpt");
        save_checkpoint(&original, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(original, loaded);
    }

    #[test]
    fn byte_encoding_is_deterministic() {
        assert_eq!(checkpoint_bytes(&params()), checkpoint_bytes(&params()));
    }

    #[test]
    fn file_stores_w1_row_major() {
        let config = ModelConfig {
            dim: 1,
            hidden_dim: 2,
            ngram_length: 3,
        };
        let mut p = SelectorParams::init(&config, 0);
        // Column-major memory: w1[j * hidden + i]. Tag each cell as 10*i + j.
        let input_dim = config.input_dim();
        for j in 0..input_dim {
            for i in 0..config.hidden_dim {
                p.w1[j * config.hidden_dim + i] = (10 * i + j) as f64;
            }
        }
        let bytes = checkpoint_bytes(&p);
        // Row-major file order: (i=0, j=0..3), then (i=1, j=0..3).
        for i in 0..config.hidden_dim {
            for j in 0..input_dim {
                let at = 32 + 8 * (i * input_dim + j);
                let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                assert_eq!(v, (10 * i + j) as f64);
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = checkpoint_bytes(&params());
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            checkpoint_from_bytes(b"short"),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = checkpoint_bytes(&params());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn truncation_is_rejected_with_sizes() {
        let bytes = checkpoint_bytes(&params());
        let cut = &bytes[..bytes.len() - 8];
        match checkpoint_from_bytes(cut) {
            Err(CheckpointError::SizeMismatch { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, cut.len());
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn zero_shape_is_rejected() {
        let mut bytes = checkpoint_bytes(&params());
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(CheckpointError::ZeroShape)
        ));
    }

    #[test]
    fn text_export_carries_header_fields() {
        let text = export_text(&params());
        assert!(text.contains("\"dim\": 16"));
        assert!(text.contains("\"hidden_dim\": 4"));
        assert!(text.contains("\"seed\": 42"));
        assert!(text.contains("\"w1\""));
    }
}
