use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encode::NormStats;
use super::model::DualTransformer;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MOBUNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Storage width of parameter blobs. Computation is always in f64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub stats: NormStats,
    pub precision: Precision,
    pub n_params: usize,
}

/// A model together with the normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DualTransformer,
    pub stats: NormStats,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(model: &DualTransformer, stats: &NormStats, precision: Precision) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        stats: stats.clone(),
        precision,
        n_params: model.n_params(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 8 * model.n_params() + 1024);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params.groups.len() as u32);
    for g in &model.params.groups {
        put_u32(&mut out, g.name.len() as u32);
        out.extend_from_slice(g.name.as_bytes());
        put_u32(&mut out, g.slot.rows as u32);
        put_u32(&mut out, g.slot.cols as u32);
        for &v in model.params.get(g.slot) {
            match precision {
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Schema("checkpoint is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Schema("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint schema version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;
    let mut model = DualTransformer::new(header.config, 0).map_err(|e| Error::Schema(e.to_string()))?;
    if model.n_params() != header.n_params {
        return Err(Error::Schema("parameter count does not match the configuration".into()));
    }
    let n_groups = r.u32()? as usize;
    if n_groups != model.params.groups.len() {
        return Err(Error::Schema("parameter group count does not match".into()));
    }
    let width = match header.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    for gi in 0..n_groups {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Schema("bad group name".into()))?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let slot = model.params.groups[gi].slot;
        if name != model.params.groups[gi].name || rows != slot.rows || cols != slot.cols {
            return Err(Error::Schema(format!("unexpected parameter group `{name}` ({rows}x{cols})")));
        }
        let data = r.take(slot.len() * width)?;
        for (k, chunk) in data.chunks_exact(width).enumerate() {
            model.params.values[slot.offset + k] = match header.precision {
                Precision::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
                Precision::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
            };
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Schema("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        model,
        stats: header.stats,
    })
}

pub fn save_checkpoint(path: &Path, model: &DualTransformer, stats: &NormStats, precision: Precision) -> Result<()> {
    fs::write(path, encode_checkpoint(model, stats, precision)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staypoint::TRIP_DIM;

    fn stats() -> NormStats {
        NormStats {
            mean: [0.1, 0.2, 300.0, 5.0, 6.0],
            std: [0.7, 0.7, 200.0, 3.0, 3.0],
            trip_mean: [1.0; TRIP_DIM],
            trip_std: [2.0; TRIP_DIM],
        }
    }

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_head: 2,
            event_blocks: 1,
            max_len: 12,
            n_poi: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = DualTransformer::new(small(), 5).unwrap();
        let bytes = encode_checkpoint(&m, &stats(), Precision::F64).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.stats, stats());
    }

    #[test]
    fn single_precision_rounds_values() {
        let m = DualTransformer::new(small(), 5).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&m, &stats(), Precision::F32).unwrap()).unwrap();
        for (a, b) in back.model.params.values.iter().zip(&m.params.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let m = DualTransformer::new(small(), 5).unwrap();
        let mut bytes = encode_checkpoint(&m, &stats(), Precision::F64).unwrap();
        bytes[8] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Schema(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Schema(_))));
        assert!(matches!(load_checkpoint(Path::new("/nonexistent/ckpt.bin")), Err(Error::MissingArtifact(_))));
    }
}
