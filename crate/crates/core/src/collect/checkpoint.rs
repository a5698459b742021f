//! Checkpoint records and their on-disk format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "AECK"                      4 bytes magic
//! version                     u16
//! layer count                 u16   number of entries in layer_dims
//! layer dims                  u32 each
//! per dense layer:            weights (row-major, fan_in x fan_out) then biases, f64 each
//! metadata length             u32
//! metadata                    UTF-8 JSON: id, step, rng_seed, train/val metrics
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::netcore::{probe_weights, Dense, Metrics, ModelParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AECK";
pub const FORMAT_VERSION: u16 = 1;
pub const FILE_EXTENSION: &str = "aeck";

/// A converged parameter snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub id: u64,
    pub params: ModelParams,
    /// Always `probe_weights(&params)`.
    pub probe: Vec<f64>,
    pub collected_at_step: usize,
    pub val_metrics: Metrics,
    pub train_metrics: Metrics,
}

impl AsRef<ModelParams> for CheckpointRecord {
    fn as_ref(&self) -> &ModelParams {
        &self.params
    }
}

impl CheckpointRecord {
    pub fn new(
        id: u64,
        params: ModelParams,
        collected_at_step: usize,
        train_metrics: Metrics,
        val_metrics: Metrics,
    ) -> Self {
        let probe = probe_weights(&params);
        Self {
            id,
            params,
            probe,
            collected_at_step,
            val_metrics,
            train_metrics,
        }
    }

    /// File name used inside checkpoint directories.
    pub fn file_name(&self) -> String {
        format!("ckpt-{:04}.{FILE_EXTENSION}", self.id)
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    id: u64,
    step: usize,
    rng_seed: u64,
    train_metrics: Metrics,
    val_metrics: Metrics,
}

pub fn encode_checkpoint(record: &CheckpointRecord) -> Result<Vec<u8>> {
    let dims = record.params.layer_dims();
    let layer_count = u16::try_from(dims.len())
        .map_err(|_| Error::Format(format!("{} layers exceed the format limit", dims.len())))?;
    let mut buf = Vec::with_capacity(16 + 8 * record.params.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&layer_count.to_le_bytes());
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("layer dim {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in record.params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let meta = serde_json::to_vec(&Metadata {
        id: record.id,
        step: record.collected_at_step,
        rng_seed: record.params.rng_seed(),
        train_metrics: record.train_metrics,
        val_metrics: record.val_metrics,
    })?;
    let meta_len =
        u32::try_from(meta.len()).map_err(|_| Error::Format("metadata too large".into()))?;
    buf.extend_from_slice(&meta_len.to_le_bytes());
    buf.extend_from_slice(&meta);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "file truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corruption(format!("{what} size overflows")))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointRecord> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let layer_count = r.u16("layer count")? as usize;
    let dims = (0..layer_count)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Corruption(format!("invalid layer dims {dims:?}")));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = r.f64s(fan_in * fan_out, "weights")?;
        let biases = r.f64s(fan_out, "biases")?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((fan_in, fan_out), weights)
                .expect("length matches shape"),
            biases: Array1::from(biases),
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_bytes = r.take(meta_len, "metadata")?;
    if r.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after metadata",
            bytes.len() - r.pos
        )));
    }
    let meta: Metadata = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::Corruption(format!("metadata: {e}")))?;
    let params = ModelParams::from_layers(dims, layers, meta.rng_seed)
        .map_err(|e| Error::Corruption(e.to_string()))?;
    Ok(CheckpointRecord::new(
        meta.id,
        params,
        meta.step,
        meta.train_metrics,
        meta.val_metrics,
    ))
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(record: &CheckpointRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(record)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointRecord> {
    decode_checkpoint(&fs::read(path)?)
}

/// Saves every record into `dir` under [`CheckpointRecord::file_name`].
pub fn save_all(records: &[CheckpointRecord], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for r in records {
        save_checkpoint(r, dir.join(r.file_name()))?;
    }
    Ok(())
}

/// Loads every `.aeck` file in `dir`, ordered by id.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<CheckpointRecord>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(FILE_EXTENSION) {
            out.push(load_checkpoint(&path)?);
        }
    }
    out.sort_by_key(|r| r.id);
    Ok(out)
}
