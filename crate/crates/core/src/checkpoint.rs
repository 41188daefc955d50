//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            b"DIVE"
//! format version   u32
//! config blob      u32 length + UTF-8 `key=value` lines
//! record count     u32
//! per record:      u16 name length + UTF-8 name, u8 rank, u32 dims,
//!                  raw f32 values
//! step counter     u64
//! ```
//!
//! Parameters are written in sorted name order; optimizer moment buffers are
//! appended in the same record layout under names suffixed `.m` / `.v`.
//! Writing is canonical, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DIVE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
    /// `key=value` lines describing the model configuration.
    pub config: String,
    pub step: u64,
}

pub fn save(
    path: &Path,
    params: &ParamStore<f32>,
    adam: Option<&AdamState>,
    config: &str,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());

    let moment_records = adam.map(|state| {
        let mut records: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (name, values) in &state.first {
            records.push((format!("{name}.m"), vec![values.len()], values.as_slice()));
        }
        for (name, values) in &state.second {
            records.push((format!("{name}.v"), vec![values.len()], values.as_slice()));
        }
        records
    });
    let n_records = params.len() + moment_records.as_ref().map_or(0, |r| r.len());
    out.extend_from_slice(&(n_records as u32).to_le_bytes());

    for (name, tensor) in params.iter() {
        write_record(&mut out, name, tensor.shape(), tensor.data())?;
    }
    if let Some(records) = &moment_records {
        for (name, shape, values) in records {
            write_record(&mut out, name, shape, values)?;
        }
    }
    out.extend_from_slice(&adam.map_or(0, |a| a.step).to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
    if name.len() > u16::MAX as usize {
        return Err(Error::checkpoint(name, "name longer than 65535 bytes"));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::checkpoint(name, format!("rank {} exceeds u8", shape.len())));
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &dim in shape {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut reader = Reader { bytes: &bytes, pos: 0 };

    let magic = reader.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::checkpoint("magic", format!("expected \"DIVE\", got {magic:?}")));
    }
    let version = reader.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            "version",
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let config_len = reader.u32("config length")? as usize;
    let config = String::from_utf8(reader.take(config_len, "config")?.to_vec())
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;
    let n_records = reader.u32("record count")? as usize;

    let mut params = ParamStore::new();
    let mut first: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut second: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for index in 0..n_records {
        let field = |part: &str| format!("record {index} {part}");
        let name_len = reader.u16(&field("name length"))? as usize;
        let name = String::from_utf8(reader.take(name_len, &field("name"))?.to_vec())
            .map_err(|e| Error::checkpoint(field("name"), e.to_string()))?;
        let rank = reader.u8(&field("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for d in 0..rank {
            shape.push(reader.u32(&format!("record {index} ({name}) dim {d}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = reader.take(numel * 4, &format!("record {index} ({name}) values"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(base) = name.strip_suffix(".m") {
            first.insert(base.to_string(), values);
        } else if let Some(base) = name.strip_suffix(".v") {
            second.insert(base.to_string(), values);
        } else {
            params
                .insert(
                    name.clone(),
                    Tensor::new(shape, values)
                        .map_err(|e| Error::checkpoint(&name, e.to_string()))?,
                )
                .map_err(|e| Error::checkpoint(&name, e.to_string()))?;
        }
    }
    let step = reader.u64("step counter")?;
    if reader.pos != bytes.len() {
        return Err(Error::checkpoint(
            "trailer",
            format!("{} unexpected trailing bytes", bytes.len() - reader.pos),
        ));
    }

    let adam = if first.is_empty() && second.is_empty() {
        None
    } else {
        let m_names: Vec<&String> = first.keys().collect();
        let v_names: Vec<&String> = second.keys().collect();
        if m_names != v_names {
            return Err(Error::checkpoint(
                "optimizer moments",
                "mismatched .m / .v record sets",
            ));
        }
        for name in &m_names {
            if params.get(name).is_none() {
                return Err(Error::checkpoint(
                    format!("{name}.m"),
                    "moment record without matching parameter",
                ));
            }
        }
        Some(AdamState { first, second, step })
    };
    Ok(Checkpoint { params, adam, config, step })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::checkpoint(
                field,
                format!(
                    "needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}
