//! Binary checkpoints: a magic line, the header length, a JSON header
//! naming the config, vocabulary, step and every parameter with its shape
//! and byte offset, then all parameters as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::config::ModelConfig;
use crate::corpus::Vocabulary;
use crate::error::{DcaError, Result};
use crate::model::{layout, Model};

const MAGIC: &str = "DCACKPT 1";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: u32,
    pub step: u64,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &Model, step: u64) -> Result<Vec<u8>> {
    let mut offset = 0;
    let params = model
        .params
        .iter()
        .map(|(_, name, t)| {
            let e = ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * 8;
            e
        })
        .collect();
    let header = Header {
        format: FORMAT,
        step,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        params,
    };
    let json = serde_json::to_string(&header)?;
    let mut out = format!("{MAGIC}\n{}\n{json}", json.len()).into_bytes();
    out.reserve(offset);
    for (_, _, t) in model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes through a temporary file and renames, so an interrupted save
/// never clobbers an existing checkpoint.
pub fn save(path: &Path, model: &Model, step: u64) -> Result<()> {
    let bytes = to_bytes(model, step)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> DcaError {
    DcaError::CorruptCheckpoint(msg.into())
}

fn split_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("truncated header"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
    Ok((line, &bytes[nl + 1..]))
}

/// Parses the header and returns it with the payload bytes.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let (magic, rest) = split_line(bytes)?;
    if magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let (len, rest) = split_line(rest)?;
    let len: usize = len.parse().map_err(|_| corrupt("bad header length"))?;
    if rest.len() < len {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&rest[..len]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.format != FORMAT {
        return Err(DcaError::IncompatibleCheckpoint(format!(
            "unsupported format {}",
            header.format
        )));
    }
    Ok((header, &rest[len..]))
}

/// Rebuilds a model. Layout disagreements are reported before payload
/// damage, so a wrong-architecture file is never mistaken for a truncated one.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, u64)> {
    let (header, payload) = read_header(bytes)?;
    let specs = layout(&header.config);
    if specs.len() != header.params.len() {
        return Err(DcaError::IncompatibleCheckpoint(format!(
            "config expects {} parameters, checkpoint has {}",
            specs.len(),
            header.params.len()
        )));
    }
    let mut expected_offset = 0;
    for (s, e) in specs.iter().zip(&header.params) {
        if s.name != e.name || s.shape != e.shape {
            return Err(DcaError::IncompatibleCheckpoint(format!(
                "parameter {} {:?} does not match expected {} {:?}",
                e.name, e.shape, s.name, s.shape
            )));
        }
        if e.offset != expected_offset {
            return Err(corrupt(format!(
                "parameter {} at offset {}, expected {expected_offset}",
                e.name, e.offset
            )));
        }
        expected_offset += e.shape.iter().product::<usize>() * 8;
    }
    if payload.len() != expected_offset {
        return Err(corrupt(format!(
            "payload holds {} bytes, expected {expected_offset}",
            payload.len()
        )));
    }
    let mut store = ParamStore::new();
    for e in &header.params {
        let len: usize = e.shape.iter().product();
        let data = payload[e.offset..e.offset + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    let vocab = Vocabulary::from_tokens(header.vocab).map_err(|e| corrupt(format!("bad vocabulary: {e}")))?;
    let model = Model::from_parts(header.config, vocab, store)?;
    Ok((model, header.step))
}

pub fn load(path: &Path) -> Result<(Model, u64)> {
    from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and requires its architecture to match `expected`.
pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<(Model, u64)> {
    let (model, step) = load(path)?;
    if !model.config.same_architecture(expected) {
        return Err(DcaError::IncompatibleCheckpoint(format!(
            "checkpoint {} was trained with a different architecture than config {:?}",
            path.display(),
            expected.tag
        )));
    }
    Ok((model, step))
}
