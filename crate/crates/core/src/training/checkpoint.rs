//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TAE1" | version: u32 | record count: u32 | records... | crc32: u32
//! record = name_len: u32 | name: utf8 | dtype: u8 | rank: u32 | extents: u64 * rank | payload
//! ```
//!
//! dtype 0 is raw f64 data, dtype 1 is raw bytes. The CRC covers every byte
//! before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adamw::AdamWState;
use super::model::TaeModel;
use crate::enhancement::AlphaSource;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TAE1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;
const DTYPE_F64: u8 = 0;
const DTYPE_BYTES: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at {len} bytes")]
    Truncated { len: usize },
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TaeModel,
    pub optimizer: AdamWState,
    /// Configuration snapshot, stored verbatim.
    pub config: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    alpha_source: AlphaSource,
}

impl Checkpoint {
    pub fn fresh(model: TaeModel, config: String) -> Self {
        let optimizer = AdamWState::zeros(&model.param_sizes());
        Self { model, optimizer, config }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records: Vec<(String, u8, Vec<u64>, Vec<u8>)> = Vec::new();
        let meta = Meta {
            step: self.optimizer.step,
            alpha_source: self.model.predictor.alpha_source,
        };
        let meta = serde_json::to_vec(&meta).expect("meta serializes");
        records.push(("meta".into(), DTYPE_BYTES, vec![meta.len() as u64], meta));
        records.push((
            "config".into(),
            DTYPE_BYTES,
            vec![self.config.len() as u64],
            self.config.as_bytes().to_vec(),
        ));
        let f64_record = |name: String, shape: &[usize], data: &[f64]| {
            let payload = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name, DTYPE_F64, shape.iter().map(|&d| d as u64).collect(), payload)
        };
        let params = self.model.named_params();
        for (name, t) in &params {
            records.push(f64_record(name.clone(), t.shape(), t.data()));
        }
        for (i, (name, _)) in params.iter().enumerate() {
            let m = &self.optimizer.m[i];
            let v = &self.optimizer.v[i];
            records.push(f64_record(format!("adamw.m.{name}"), &[m.len()], m));
            records.push(f64_record(format!("adamw.v.{name}"), &[v.len()], v));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, dtype, extents, payload) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dtype);
            out.extend_from_slice(&(extents.len() as u32).to_le_bytes());
            for e in extents {
                out.extend_from_slice(&e.to_le_bytes());
            }
            out.extend_from_slice(&payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Validates the header and checksum before decoding anything.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(CheckpointError::Truncated { len: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        decode(body)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated { len: self.buf.len() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

enum Payload {
    F64(Vec<usize>, Vec<f64>),
    Bytes(Vec<u8>),
}

fn decode(body: &[u8]) -> std::result::Result<Checkpoint, CheckpointError> {
    let malformed = |m: String| CheckpointError::Malformed(m);
    let mut r = Reader { buf: body, pos: 8 };
    let count = r.u32()?;
    let mut records = std::collections::BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| malformed("record name is not utf-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let mut extents = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            extents.push(r.u64()? as usize);
        }
        let n = extents
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| malformed(format!("record {name}: extents overflow")))?;
        let payload = match dtype {
            DTYPE_F64 => {
                let raw = r.take(n.checked_mul(8).ok_or_else(|| malformed("payload overflow".into()))?)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Payload::F64(extents, data)
            }
            DTYPE_BYTES => Payload::Bytes(r.take(n)?.to_vec()),
            other => return Err(malformed(format!("record {name}: unknown dtype {other}"))),
        };
        if records.insert(name.clone(), payload).is_some() {
            return Err(malformed(format!("duplicate record {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let mut bytes = |name: &str| match records.remove(name) {
        Some(Payload::Bytes(b)) => Ok(b),
        _ => Err(malformed(format!("missing byte record {name}"))),
    };
    let meta: Meta = serde_json::from_slice(&bytes("meta")?).map_err(|e| malformed(format!("meta: {e}")))?;
    let config = String::from_utf8(bytes("config")?).map_err(|_| malformed("config is not utf-8".into()))?;

    let mut model = TaeModel::init(0, meta.alpha_source);
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut tensor = |name: &str| match records.remove(name) {
        Some(Payload::F64(shape, data)) => {
            Tensor::new(shape, data).map_err(|e| malformed(format!("record {name}: {e}")))
        }
        _ => Err(malformed(format!("missing tensor record {name}"))),
    };
    let mut optimizer = AdamWState {
        step: meta.step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for name in &names {
        let t = tensor(name)?;
        model.set_param(name, t).map_err(|e| malformed(e.to_string()))?;
    }
    for (name, size) in names.iter().zip(model.param_sizes()) {
        for (prefix, dst) in [("m", &mut optimizer.m), ("v", &mut optimizer.v)] {
            let t = tensor(&format!("adamw.{prefix}.{name}"))?;
            if t.len() != size {
                return Err(malformed(format!("moment {prefix} for {name} has {} values", t.len())));
            }
            dst.push(t.into_data());
        }
    }
    if let Some(extra) = records.keys().next() {
        return Err(malformed(format!("unexpected record {extra}")));
    }
    Ok(Checkpoint { model, optimizer, config })
}

/// Writes to a temporary sibling file, then renames over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhancement::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut model = TaeModel::init(3, AlphaSource::Global);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let mut c = Checkpoint::fresh(model, "seed = 3\n".into());
        c.optimizer.step = 17;
        c.optimizer.m[2][1] = 0.25;
        c.optimizer.v[5][0] = 1e-300;
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let img = Tensor::from_fn(&[3, 8, 9], |i| (i % 7) as f64 / 7.0);
        for mode in Mode::ALL {
            let a = c.model.enhance(&img, mode).unwrap();
            let b = back.model.enhance(&img, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 40] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Checksum { .. }), "{err:?}");
        }
        assert_eq!(
            Checkpoint::from_bytes(&bytes[..10]).unwrap_err(),
            CheckpointError::Truncated { len: 10 }
        );
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert_eq!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            CheckpointError::Version { found: 9, expected: 1 }
        );
        bytes[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err(), CheckpointError::BadMagic);
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let k = bytes.len() / 3;
        bytes[k] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            CheckpointError::Checksum { .. }
        ));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tae");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = load_checkpoint(&dir.path().join("none")).unwrap_err();
        assert_eq!(missing.kind(), "io");
    }
}
