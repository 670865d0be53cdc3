//! Named-tensor archives.
//!
//! Layout: the magic line `BRIDGE-MTL-CKPT\n`, a little-endian `u64` header
//! length, a JSON header `{format_version, config, tensors: [{name, shape}]}`
//! and then every tensor's values as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"BRIDGE-MTL-CKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    /// Absent for bare tensor archives such as exported backbones.
    pub config: Option<ModelConfig>,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub config: Option<ModelConfig>,
    pub tensors: ParamStore,
}

pub fn write_archive(
    path: &Path,
    config: Option<&ModelConfig>,
    tensors: &ParamStore,
) -> Result<()> {
    let header = ArchiveHeader {
        format_version: FORMAT_VERSION,
        config: config.cloned(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for (_, t) in tensors.iter() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let io = |e| Error::io(path, e);
    let mut input = BufReader::new(File::open(path).map_err(io)?);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; MAGIC.len()];
    input
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated file"))?;
    if magic != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let mut len = [0u8; 8];
    input
        .read_exact(&mut len)
        .map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(bad("implausible header length"));
    }
    let mut json = vec![0u8; len];
    input
        .read_exact(&mut json)
        .map_err(|_| bad("truncated header"))?;
    let header: ArchiveHeader = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut tensors = ParamStore::new();
    for rec in &header.tensors {
        let n: usize = rec.shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| bad(&format!("truncated data for `{}`", rec.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(rec.name.clone(), Tensor::from_vec(&rec.shape, data)?);
    }
    if input.read(&mut [0u8; 1]).map_err(io)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(Archive {
        config: header.config,
        tensors,
    })
}

/// Writes a model's configuration and parameters.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_archive(path, Some(model.config()), model.params())
}

/// Rebuilds a model from a checkpoint, validating every tensor shape
/// against the stored configuration.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let archive = read_archive(path)?;
    let config = archive.config.ok_or_else(|| {
        Error::Checkpoint(format!("{} has no model configuration", path.display()))
    })?;
    let mut model = Model::new(config)?;
    model
        .set_params(archive.tensors)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(model)
}

/// What [`load_pretrained_backbone`] did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackboneReport {
    pub loaded: Vec<String>,
    /// Extractor names in the archive that the model does not have.
    pub unexpected: Vec<String>,
    /// Extractor names of the model absent from the archive.
    pub missing: Vec<String>,
}

/// Replaces the model's `extractor.*` parameters with those of an archive.
/// Branch parameters are never touched. Name mismatches are rejected unless
/// `allow_partial` is set; shape mismatches are always rejected.
pub fn load_pretrained_backbone(
    path: &Path,
    model: &mut Model,
    allow_partial: bool,
) -> Result<BackboneReport> {
    let archive = read_archive(path)?;
    let incoming = archive.tensors.with_prefix("extractor.");
    let expected = model.params().with_prefix("extractor.");
    let mut report = BackboneReport::default();
    let mut bad_shapes = Vec::new();
    for (name, t) in incoming.iter() {
        match expected.get(name) {
            Ok(cur) if cur.shape() == t.shape() => report.loaded.push(name.clone()),
            Ok(cur) => bad_shapes.push(format!(
                "{name} (archive {:?}, model {:?})",
                t.shape(),
                cur.shape()
            )),
            Err(_) => report.unexpected.push(name.clone()),
        }
    }
    report.missing = expected
        .names()
        .filter(|n| !incoming.contains(n))
        .map(String::from)
        .collect();
    if !bad_shapes.is_empty() {
        return Err(Error::Shape(format!(
            "backbone shape mismatch: {}",
            bad_shapes.join(", ")
        )));
    }
    if !allow_partial && (!report.unexpected.is_empty() || !report.missing.is_empty()) {
        return Err(Error::Validation(format!(
            "backbone names do not match (unexpected: [{}], missing: [{}]); pass allow-partial to load the overlap",
            report.unexpected.join(", "),
            report.missing.join(", ")
        )));
    }
    for name in &report.loaded {
        let t = incoming.get(name)?.clone();
        *model.params_mut().get_mut(name).expect("checked above") = t;
    }
    Ok(report)
}
