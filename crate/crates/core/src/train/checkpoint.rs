//! Binary checkpoint files: a JSON header (config snapshot, task, epoch)
//! followed by every named tensor of the model as little-endian f32.
//!
//! Reloading rebuilds the model from the stored config and fills every
//! parameter and running-statistics buffer, so eval outputs reproduce
//! bitwise. Optimizer velocity and rng state are deliberately not stored;
//! a checkpoint is a model snapshot, not a mid-run suspend point.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{build_model, stream_rng, Model, Task, STREAM_INIT};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::{Slot, Tensors};

const MAGIC: &[u8; 4] = b"PSCK";
const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config: Config,
    pub task: Task,
    pub num_classes: Option<usize>,
    pub epoch: usize,
}

impl Meta {
    pub fn new(cfg: &Config, epoch: usize, num_classes: Option<usize>) -> Self {
        let task = if num_classes.is_some() { Task::FinetuneClassify } else { cfg.train.task };
        Meta { config: cfg.clone(), task, num_classes, epoch }
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFormat { path: path.display().to_string(), reason: reason.into() }
}

pub fn save(path: &Path, model: &mut Model, meta: &Meta) -> Result<()> {
    let mut records: Vec<(String, u8, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit("", &mut |name, slot| {
        let (kind, value) = match slot {
            Slot::Param(p) => (KIND_PARAM, &p.value),
            Slot::Buffer(b) => (KIND_BUFFER, &*b),
        };
        records.push((
            name,
            kind,
            value.shape().to_vec(),
            value.iter().copied().collect(),
        ));
    });

    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let header = serde_json::to_vec(meta)?;
    w.write_u64::<LittleEndian>(header.len() as u64)?;
    w.write_all(&header)?;
    w.write_u32::<LittleEndian>(records.len() as u32)?;
    for (name, kind, shape, data) in &records {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(*kind)?;
        w.write_u8(shape.len() as u8)?;
        for &d in shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for &v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Read only the header of a checkpoint.
pub fn read_meta(path: &Path) -> Result<Meta> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read_meta_from(&mut r, path)
}

fn read_meta_from(r: &mut impl Read, path: &Path) -> Result<Meta> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad(path, "file too short for magic"))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad(path, "truncated version"))?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(|_| bad(path, "truncated header length"))? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad(path, "truncated header"))?;
    Ok(serde_json::from_slice(&header)?)
}

/// Rebuild the checkpointed model and fill every tensor from the file.
pub fn load(path: &Path) -> Result<(Model, Meta)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let meta = read_meta_from(&mut r, path)?;

    let count = r.read_u32::<LittleEndian>().map_err(|_| bad(path, "truncated tensor count"))? as usize;
    let mut tensors: BTreeMap<String, (u8, Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>().map_err(|_| bad(path, "truncated tensor table"))? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad(path, "truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| bad(path, "tensor name not utf-8"))?;
        let kind = r.read_u8().map_err(|_| bad(path, "truncated tensor table"))?;
        let ndim = r.read_u8().map_err(|_| bad(path, "truncated tensor table"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>().map_err(|_| bad(path, "truncated tensor shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes).map_err(|_| bad(path, format!("truncated data for {name}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), (kind, shape, data)).is_some() {
            return Err(bad(path, format!("duplicate tensor {name}")));
        }
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(bad(path, "trailing bytes after tensor data"));
    }

    let mut init_rng = stream_rng(meta.config.train.seed, STREAM_INIT);
    let mut model = build_model(&meta.config, meta.task, meta.num_classes, &mut init_rng)?;
    let mut failure: Option<Error> = None;
    model.visit("", &mut |name, slot| {
        if failure.is_some() {
            return;
        }
        let Some((kind, shape, data)) = tensors.remove(&name) else {
            failure = Some(Error::CheckpointMismatch(format!("missing tensor {name}")));
            return;
        };
        let (expected_kind, value) = match slot {
            Slot::Param(p) => (KIND_PARAM, &mut p.value),
            Slot::Buffer(b) => (KIND_BUFFER, b),
        };
        if kind != expected_kind {
            failure = Some(Error::CheckpointMismatch(format!("tensor {name} has wrong kind")));
            return;
        }
        if shape != value.shape() {
            failure = Some(Error::CheckpointMismatch(format!(
                "tensor {name}: stored shape {shape:?} vs model {:?}",
                value.shape()
            )));
            return;
        }
        match ndarray::ArrayD::from_shape_vec(shape, data) {
            Ok(arr) => *value = arr,
            Err(e) => failure = Some(Error::CheckpointMismatch(format!("tensor {name}: {e}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has tensor {extra} the model does not"
        )));
    }
    Ok((model, meta))
}
