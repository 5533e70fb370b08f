//! Model files (little-endian): `"SQZM"`, u32 version, u32 length + JSON
//! metadata (config, label ranges, training summary), u32 tensor count, then
//! per tensor u32 name length, UTF-8 name, u32 rank, u32 dims, f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sqzt_core::homodyne::ParamRanges;

use crate::config::CnnConfig;
use crate::error::{Error, Result};
use crate::network::Model;

pub const MAGIC: [u8; 4] = *b"SQZM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CnnConfig,
    pub ranges: ParamRanges,
    pub training: Option<TrainingMeta>,
}

pub fn write_checkpoint<W: Write>(model: &Model<f32>, training: Option<TrainingMeta>, w: &mut W) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config().clone(),
        ranges: model.ranges,
        training,
    };
    let blob = serde_json::to_vec(&meta)?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(&blob)?;
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &model.params()[t.offset..t.offset + t.len] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model<f32>, training: Option<TrainingMeta>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, training, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a checkpoint, checking every tensor name and shape against the
/// layer plan rebuilt from the stored config.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let blob_len = read_u32(r)? as usize;
    let mut blob = vec![0u8; blob_len];
    r.read_exact(&mut blob)?;
    let meta: CheckpointMeta = serde_json::from_slice(&blob)?;
    let mut model = Model::<f32>::zeros(meta.config.clone())?;
    model.ranges = meta.ranges;

    let expected = model.tensors();
    let count = read_u32(r)? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, config implies {}", expected.len())));
    }
    for t in &expected {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if name != t.name {
            return Err(Error::Checkpoint(format!("expected tensor {:?}, found {name:?}", t.name)));
        }
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        if shape != t.shape {
            return Err(Error::Checkpoint(format!("{name}: shape {shape:?}, expected {:?}", t.shape)));
        }
        let mut buf = vec![0u8; 4 * t.len];
        r.read_exact(&mut buf)?;
        let dst = &mut model.params_mut()[t.offset..t.offset + t.len];
        for (d, c) in dst.iter_mut().zip(buf.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((model, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
