//! Checkpoint container.
//!
//! ```text
//! magic        "FSCK"
//! version      u32
//! manifest_len u64
//! manifest     UTF-8 `key = value` lines: model config fields, `tensors`,
//!              then any caller metadata under a `meta.` prefix
//! tensors      repeated: name_len u32, name bytes, tensor container
//! ```
//!
//! Tensors are written in name order so a save of a loaded checkpoint is
//! byte-identical to the original.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::net::FsNet;
use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::io::{read_exact, read_u32};
use crate::tensor::{read_tensor, write_tensor, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_PREFIX: &str = "meta.";
const MAX_NAME: u32 = 4096;
const MAX_MANIFEST: u64 = 1 << 20;

pub fn write_checkpoint<T: Real, W: Write>(
    model: &FsNet<T>,
    metadata: &BTreeMap<String, String>,
    out: &mut W,
) -> Result<()> {
    let mut entries: Vec<(String, String)> = model
        .config
        .to_entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    entries.push(("tensors".into(), model.params.len().to_string()));
    for (k, v) in metadata {
        if k.contains(['=', '#', '\n']) || v.contains(['#', '\n']) {
            return Err(Error::InvalidArgument(format!("metadata entry {k:?} cannot be stored")));
        }
        entries.push((format!("{META_PREFIX}{k}"), v.clone()));
    }
    let manifest = kv::render(entries.iter().map(|(k, v)| (k.as_str(), v.clone())));
    let wrap = |e: std::io::Error| Error::Format(format!("writing checkpoint: {e}"));
    out.write_all(CHECKPOINT_MAGIC).map_err(wrap)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(wrap)?;
    out.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(wrap)?;
    out.write_all(manifest.as_bytes()).map_err(wrap)?;
    for (name, tensor) in model.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(wrap)?;
        out.write_all(name.as_bytes()).map_err(wrap)?;
        write_tensor(tensor, out).map_err(wrap)?;
    }
    Ok(())
}

/// Reads a checkpoint, returning the model and caller metadata.
pub fn read_checkpoint<T: Real, R: Read>(input: &mut R) -> Result<(FsNet<T>, BTreeMap<String, String>)> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "checkpoint magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(input, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    read_exact(input, &mut len, "manifest length")?;
    let len = u64::from_le_bytes(len);
    if len > MAX_MANIFEST {
        return Err(Error::Format(format!("manifest length {len} is implausible")));
    }
    let mut manifest = vec![0u8; len as usize];
    read_exact(input, &mut manifest, "manifest")?;
    let manifest = String::from_utf8(manifest)
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let mut entries = kv::parse(&manifest)?;
    let count: usize = entries
        .remove("tensors")
        .ok_or_else(|| Error::Format("manifest lacks tensor count".into()))?
        .parse()
        .map_err(|_| Error::Format("bad tensor count".into()))?;
    let metadata: BTreeMap<String, String> = entries
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(META_PREFIX).map(|k| (k.to_string(), v.clone())))
        .collect();
    entries.retain(|k, _| !k.starts_with(META_PREFIX));
    let config = ModelConfig::from_entries(&entries)?;

    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let n = read_u32(input, "tensor name length")?;
        if n > MAX_NAME {
            return Err(Error::Format(format!("tensor name length {n} is implausible")));
        }
        let mut name = vec![0u8; n as usize];
        read_exact(input, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let t = read_tensor(input)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let model = FsNet::from_parts(config, ParameterSet::from_map(tensors))?;
    Ok((model, metadata))
}

pub fn save_checkpoint<T: Real>(
    model: &FsNet<T>,
    metadata: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, metadata, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(FsNet<T>, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
