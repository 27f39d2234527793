//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SNRD" | version | json_len | ArchConfig JSON
//! for every parameter in model order:
//!     name_len | name (UTF-8) | ndim | dims… | f32 data
//! crc32 of every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ArchConfig, Model, ParamKind};
use crate::tensor::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNRD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint parameter mismatch: {0}")]
    Shape(String),
    #[error("checkpoint architecture is invalid: {0}")]
    Arch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> u32 {
    u32::try_from(n).unwrap_or_else(|_| panic!("{what} length {n} does not fit in u32"))
}

/// Serializes `model` with its weights rounded to `f32`.
pub fn encode_checkpoint<F: Real>(model: &Model<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let json = serde_json::to_vec(model.arch()).expect("ArchConfig serializes");
    put_u32(&mut out, len_u32(json.len(), "config"));
    out.extend_from_slice(&json);
    for p in model.params() {
        put_u32(&mut out, len_u32(p.name.len(), "name"));
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, len_u32(p.tensor.dims().len(), "dims"));
        for &d in p.tensor.dims() {
            put_u32(&mut out, len_u32(d, "dimension"));
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint, rebuilding the model in precision `F`.
///
/// Trainable parameters come back with gradient tracking enabled.
pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<Model<F>, CheckpointError> {
    let magic: [u8; 4] = bytes
        .get(..4)
        .ok_or(CheckpointError::Truncated("magic"))?
        .try_into()
        .expect("four bytes");
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated("header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let json_len = r.u32("config length")? as usize;
    let arch: ArchConfig =
        serde_json::from_slice(r.take(json_len, "config")?).map_err(|e| CheckpointError::Arch(e.to_string()))?;
    let mut model = Model::<F>::build(&arch, 0).map_err(|e| CheckpointError::Arch(e.to_string()))?;

    for p in model.params_mut() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Shape("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(CheckpointError::Shape(format!("expected parameter {}, found {name}", p.name)));
        }
        let ndim = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(3));
        for _ in 0..ndim {
            dims.push(r.u32("dims")? as usize);
        }
        if dims != p.tensor.dims() {
            return Err(CheckpointError::Shape(format!(
                "{name}: stored dims {dims:?}, architecture expects {:?}",
                p.tensor.dims()
            )));
        }
        let raw = r.take(4 * p.tensor.len(), "tensor data")?;
        for (dst, chunk) in p.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = F::of(f32::from_le_bytes(chunk.try_into().expect("four bytes")) as f64);
        }
        p.tensor.set_requires_grad(p.kind == ParamKind::Trainable);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Shape(format!(
            "{} trailing bytes after the last parameter",
            body.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint<F: Real>(model: &Model<F>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(model)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Model<F>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Model<f32> {
        Model::build(&ArchConfig::toy(), 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact_in_f32() {
        let m = toy();
        let back: Model<f32> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bad_magic() {
        let mut b = encode_checkpoint(&toy());
        b[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&b), Err(CheckpointError::BadMagic(_))));
    }

    #[test]
    fn unknown_version() {
        let mut b = encode_checkpoint(&toy());
        b[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint::<f32>(&b),
            Err(CheckpointError::Version {
                found: 99,
                expected: 1
            })
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut b = encode_checkpoint(&toy());
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f32>(&b), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn truncated_file() {
        let b = encode_checkpoint(&toy());
        assert!(decode_checkpoint::<f32>(&b[..3]).is_err());
        assert!(decode_checkpoint::<f32>(&b[..b.len() - 10]).is_err());
    }
}
