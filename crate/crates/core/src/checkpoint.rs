//! Checkpoint files: one line of JSON header, then every tensor as
//! little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::heads::{ClassifierModel, HeadSpec, MlmModel};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "radstruct-checkpoint";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub magic: String,
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub vocab_hash: String,
    /// `None` for a masked-language-model checkpoint.
    pub head: Option<HeadSpec>,
    pub created_by: String,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointHeader {
    pub fn new(model_config: ModelConfig, vocab_hash: String, head: Option<HeadSpec>) -> Self {
        Self {
            magic: CHECKPOINT_MAGIC.into(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config,
            vocab_hash,
            head,
            created_by: format!("radstruct {}", env!("CARGO_PKG_VERSION")),
            metadata: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }
}

pub fn save_checkpoint<P: ParamSet<f32>>(path: &Path, header: &CheckpointHeader, params: &P) -> Result<()> {
    let named = params.named_tensors();
    let mut header = header.clone();
    header.tensors = named
        .iter()
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let json = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(json.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for (_, t) in &named {
        for v in &t.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Tensor<f32>)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.magic != CHECKPOINT_MAGIC || header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            header.magic,
            header.format_version
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("{}: truncated at tensor {}", path.display(), entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok((header, tensors))
}

/// Copies tensors into `target` by name. With `prefix_only`, only target
/// tensors whose names start with it are filled; all of them must be present.
pub fn assign_tensors<P: ParamSet<f32>>(
    tensors: &[(String, Tensor<f32>)],
    target: &mut P,
    prefix_only: Option<&str>,
) -> Result<()> {
    let by_name: BTreeMap<&str, &Tensor<f32>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let names: Vec<String> = target.named_tensors().into_iter().map(|(n, _)| n).collect();
    if prefix_only.is_none() && names.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            names.len(),
            tensors.len()
        )));
    }
    for (name, dst) in names.iter().zip(target.tensors_mut()) {
        if prefix_only.is_some_and(|p| !name.starts_with(p)) {
            continue;
        }
        let src = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape != dst.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match {:?}",
                src.shape, dst.shape
            )));
        }
        dst.data.copy_from_slice(&src.data);
    }
    Ok(())
}

/// Encoder weights from any checkpoint kind.
pub fn load_encoder(path: &Path) -> Result<(CheckpointHeader, EncoderParams<f32>)> {
    let (header, tensors) = read_checkpoint(path)?;
    let mut enc = EncoderParams::skeleton(&header.model_config);
    assign_tensors(&tensors, &mut enc, Some("encoder."))?;
    Ok((header, enc))
}

pub fn load_mlm(path: &Path) -> Result<(CheckpointHeader, MlmModel<f32>)> {
    let (header, tensors) = read_checkpoint(path)?;
    if header.head.is_some() {
        return Err(Error::Checkpoint(format!("{} holds a classifier", path.display())));
    }
    let mut m = MlmModel::new(EncoderParams::skeleton(&header.model_config));
    assign_tensors(&tensors, &mut m, None)?;
    Ok((header, m))
}

pub fn load_classifier(path: &Path) -> Result<(CheckpointHeader, ClassifierModel<f32>)> {
    let (header, tensors) = read_checkpoint(path)?;
    let spec = header
        .head
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{} has no classifier head", path.display())))?;
    let mut m = ClassifierModel::skeleton(&header.model_config, spec.n_classes(), spec.use_aux);
    assign_tensors(&tensors, &mut m, None)?;
    Ok((header, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            max_seq_len: 6,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ff_dim: 10,
            dropout_rate: 0.1,
            seed: 9,
        }
    }

    #[test]
    fn classifier_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let m = ClassifierModel::new(init_params(&cfg()).unwrap(), 3, true, 1).unwrap();
        let spec = HeadSpec {
            task: "t".into(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
            use_aux: true,
            seq_len: 6,
        };
        let header = CheckpointHeader::new(cfg(), "abc".into(), Some(spec));
        save_checkpoint(&p, &header, &m).unwrap();
        let (h, back) = load_classifier(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.vocab_hash, "abc");
        assert_eq!(h.tensors.len(), m.named_tensors().len());
        let (_, enc) = load_encoder(&p).unwrap();
        assert_eq!(enc, m.encoder);
        assert!(load_mlm(&p).is_err());
        let a = std::fs::read(&p).unwrap();
        save_checkpoint(&p, &header, &m).unwrap();
        assert_eq!(a, std::fs::read(&p).unwrap());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = MlmModel::new(init_params(&cfg()).unwrap());
        save_checkpoint(&p, &CheckpointHeader::new(cfg(), String::new(), None), &m).unwrap();
        assert_eq!(load_mlm(&p).unwrap().1, m);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_mlm(&p), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&p, &extra).unwrap();
        assert!(load_mlm(&p).is_err());
    }
}
