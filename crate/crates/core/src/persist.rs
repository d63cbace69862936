//! Checkpoint files.
//!
//! Layout: the 4-byte magic `GNC1`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then every tensor as little-endian `f32` in manifest
//! order. Base files hold the dense layers plus normalization statistics;
//! gate files hold one task's biases and the FNV-1a digest of the base
//! payload they were trained against.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, Taxonomy};
use crate::error::{Error, Result};
use crate::ndcore::{fnv1a64, Tensor};
use crate::nn::{BaseParams, DenseLayer, GateBank};

pub const MAGIC: &[u8; 4] = b"GNC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub class_names: Vec<String>,
    pub categories: Vec<String>,
    pub category_of: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<NormStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_digest: Option<String>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseCheckpoint {
    pub params: BaseParams,
    pub taxonomy: Taxonomy,
    pub norm_stats: NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateCheckpoint {
    pub task: String,
    pub layer_sizes: Vec<usize>,
    pub taxonomy: Taxonomy,
    pub base_digest: u64,
    /// One vector per hidden layer.
    pub biases: Vec<Tensor>,
}

fn payload_bytes<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Vec<u8> {
    tensors
        .into_iter()
        .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// FNV-1a 64 over the little-endian payload of `params`.
pub fn base_digest(params: &BaseParams) -> u64 {
    fnv1a64(&payload_bytes(params.tensors()))
}

fn base_names(n_layers: usize) -> Vec<String> {
    (1..=n_layers)
        .flat_map(|l| [format!("dense{l}.weight"), format!("dense{l}.bias")])
        .collect()
}

fn gate_names(n_hidden: usize) -> Vec<String> {
    (1..=n_hidden).map(|l| format!("gate{l}.bias")).collect()
}

fn manifest(names: Vec<String>, tensors: &[&Tensor]) -> Vec<TensorEntry> {
    let mut offset = 0;
    names
        .into_iter()
        .zip(tensors)
        .map(|(name, t)| {
            let length = t.len() * 4;
            let e = TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                length,
            };
            offset += length;
            e
        })
        .collect()
}

fn encode(header: &Header, tensors: &[&Tensor]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out =
        Vec::with_capacity(8 + json.len() + tensors.iter().map(|t| t.len() * 4).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(payload_bytes(tensors.iter().copied()));
    Ok(out)
}

fn taxonomy_fields(t: &Taxonomy) -> (Vec<String>, Vec<String>, Vec<usize>) {
    (
        t.class_names().to_vec(),
        t.categories().to_vec(),
        t.category_assignments().to_vec(),
    )
}

pub fn encode_base(ckpt: &BaseCheckpoint) -> Result<Vec<u8>> {
    let tensors = ckpt.params.tensors();
    let (class_names, categories, category_of) = taxonomy_fields(&ckpt.taxonomy);
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: "base".into(),
        layer_sizes: ckpt.params.layer_sizes(),
        class_names,
        categories,
        category_of,
        norm_stats: Some(ckpt.norm_stats),
        task: None,
        base_digest: None,
        tensors: manifest(base_names(ckpt.params.layers.len()), &tensors),
    };
    encode(&header, &tensors)
}

pub fn encode_gates(ckpt: &GateCheckpoint) -> Result<Vec<u8>> {
    let tensors: Vec<&Tensor> = ckpt.biases.iter().collect();
    let (class_names, categories, category_of) = taxonomy_fields(&ckpt.taxonomy);
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: "gates".into(),
        layer_sizes: ckpt.layer_sizes.clone(),
        class_names,
        categories,
        category_of,
        norm_stats: None,
        task: Some(ckpt.task.clone()),
        base_digest: Some(format!("{:016x}", ckpt.base_digest)),
        tensors: manifest(gate_names(tensors.len()), &tensors),
    };
    encode(&header, &tensors)
}

/// Splits a file into its header and payload, checking magic, version and
/// that the manifest tiles the payload.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| Error::Corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.format_version));
    }
    let payload = &bytes[8 + header_len..];
    let mut expected = 0;
    for e in &header.tensors {
        if e.offset != expected || e.length != e.shape.iter().product::<usize>() * 4 {
            return Err(Error::Corrupt(format!(
                "manifest entry `{}` is inconsistent",
                e.name
            )));
        }
        expected += e.length;
    }
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

fn decode_tensors(
    header: &Header,
    payload: &[u8],
    names: &[String],
    shapes: &[Vec<usize>],
) -> Result<Vec<Tensor>> {
    let found: Vec<(&str, &[usize])> = header
        .tensors
        .iter()
        .map(|e| (e.name.as_str(), e.shape.as_slice()))
        .collect();
    let wanted: Vec<(&str, &[usize])> = names
        .iter()
        .map(String::as_str)
        .zip(shapes.iter().map(Vec::as_slice))
        .collect();
    if found != wanted {
        return Err(Error::Corrupt(format!(
            "tensor manifest {found:?} does not match layer sizes {:?}",
            header.layer_sizes
        )));
    }
    header
        .tensors
        .iter()
        .map(|e| {
            let data: Vec<f32> = payload[e.offset..e.offset + e.length]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Corrupt(format!(
                    "non-finite value in `{}` at {bad}",
                    e.name
                )));
            }
            Tensor::new(&e.shape, data)
        })
        .collect()
}

fn check_kind(header: &Header, expected: &'static str) -> Result<()> {
    if header.kind != expected {
        return Err(Error::KindMismatch {
            expected,
            found: header.kind.clone(),
        });
    }
    if header.layer_sizes.len() < 2 || header.layer_sizes.contains(&0) {
        return Err(Error::Corrupt(format!(
            "bad layer sizes {:?}",
            header.layer_sizes
        )));
    }
    Ok(())
}

fn header_taxonomy(header: &Header) -> Result<Taxonomy> {
    Taxonomy::new(
        header.class_names.clone(),
        header.categories.clone(),
        header.category_of.clone(),
    )
    .map_err(|e| Error::Corrupt(format!("bad taxonomy: {e}")))
}

pub fn decode_base(bytes: &[u8]) -> Result<BaseCheckpoint> {
    let (header, payload) = read_header(bytes)?;
    check_kind(&header, "base")?;
    let sizes = &header.layer_sizes;
    let shapes: Vec<Vec<usize>> = sizes
        .windows(2)
        .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
        .collect();
    let mut tensors =
        decode_tensors(&header, payload, &base_names(sizes.len() - 1), &shapes)?.into_iter();
    let mut layers = Vec::new();
    while let (Some(weights), Some(bias)) = (tensors.next(), tensors.next()) {
        layers.push(DenseLayer { weights, bias });
    }
    let stats = header
        .norm_stats
        .ok_or_else(|| Error::Corrupt("base checkpoint without normalization stats".into()))?;
    Ok(BaseCheckpoint {
        params: BaseParams { layers },
        taxonomy: header_taxonomy(&header)?,
        norm_stats: NormStats::new(stats.mean, stats.std)?,
    })
}

pub fn decode_gates(bytes: &[u8]) -> Result<GateCheckpoint> {
    let (header, payload) = read_header(bytes)?;
    check_kind(&header, "gates")?;
    let hidden = &header.layer_sizes[1..header.layer_sizes.len() - 1];
    let shapes: Vec<Vec<usize>> = hidden.iter().map(|&n| vec![n]).collect();
    let biases = decode_tensors(&header, payload, &gate_names(hidden.len()), &shapes)?;
    let task = header
        .task
        .clone()
        .ok_or_else(|| Error::Corrupt("gate checkpoint without task".into()))?;
    let digest = header
        .base_digest
        .as_deref()
        .and_then(|d| u64::from_str_radix(d, 16).ok())
        .ok_or_else(|| Error::Corrupt("gate checkpoint without a valid base digest".into()))?;
    let taxonomy = header_taxonomy(&header)?;
    taxonomy.category_index(&task)?;
    Ok(GateCheckpoint {
        task,
        layer_sizes: header.layer_sizes.clone(),
        taxonomy,
        base_digest: digest,
        biases,
    })
}

impl GateCheckpoint {
    pub fn new(base: &BaseCheckpoint, task: &str, biases: Vec<Tensor>) -> Result<Self> {
        base.taxonomy.category_index(task)?;
        let hidden = base.params.hidden_sizes();
        let shapes: Vec<usize> = biases.iter().map(|b| b.len()).collect();
        if shapes != hidden || biases.iter().any(|b| b.shape().len() != 1) {
            return Err(Error::Incompatible(format!(
                "gate sizes {shapes:?} do not match hidden sizes {hidden:?}"
            )));
        }
        Ok(Self {
            task: task.to_string(),
            layer_sizes: base.params.layer_sizes(),
            taxonomy: base.taxonomy.clone(),
            base_digest: base_digest(&base.params),
            biases,
        })
    }

    /// Fails unless these gates were trained against exactly `base`.
    pub fn verify_against(&self, base: &BaseCheckpoint) -> Result<()> {
        let digest = base_digest(&base.params);
        if digest != self.base_digest {
            return Err(Error::Incompatible(format!(
                "gates for `{}` were trained against base {:016x}, not {digest:016x}",
                self.task, self.base_digest
            )));
        }
        if self.layer_sizes != base.params.layer_sizes() || self.taxonomy != base.taxonomy {
            return Err(Error::Incompatible(format!(
                "gates for `{}` disagree with the base on layer sizes or taxonomy",
                self.task
            )));
        }
        Ok(())
    }
}

/// Builds a bank holding exactly the given tasks, in taxonomy order, after
/// checking each against `base`.
pub fn assemble_bank(base: &BaseCheckpoint, gates: &[GateCheckpoint]) -> Result<GateBank> {
    let mut tasks: Vec<String> = Vec::new();
    for g in gates {
        g.verify_against(base)?;
        if tasks.contains(&g.task) {
            return Err(Error::Argument(format!(
                "gates for `{}` given twice",
                g.task
            )));
        }
        tasks.push(g.task.clone());
    }
    tasks.sort_by_key(|t| base.taxonomy.category_index(t).expect("verified task"));
    let mut bank = GateBank::zeros(&tasks, &base.params.hidden_sizes());
    for g in gates {
        bank.set(&g.task, g.biases.clone())?;
    }
    Ok(bank)
}

pub fn save_base(path: &Path, ckpt: &BaseCheckpoint) -> Result<()> {
    std::fs::write(path, encode_base(ckpt)?).map_err(|e| Error::file(path, e))
}

pub fn load_base(path: &Path) -> Result<BaseCheckpoint> {
    decode_base(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn save_gates(path: &Path, ckpt: &GateCheckpoint) -> Result<()> {
    std::fs::write(path, encode_gates(ckpt)?).map_err(|e| Error::file(path, e))
}

pub fn load_gates(path: &Path) -> Result<GateCheckpoint> {
    decode_gates(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}
