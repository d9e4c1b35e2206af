// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary checkpoint format.
//!
//! ```text
//! bytes 0..8     magic "NPVITCK1" (last byte is the format version)
//! bytes 8..12    little-endian u32 header length H
//! bytes 12..12+H UTF-8 JSON header
//! rest           raw little-endian f64 blob, row-major tensors
//! ```
//!
//! The header holds `config`, `layer_norm_eps` and a `tensors` table
//! mapping each parameter name to `{dtype, shape, byte_offset, byte_len}`
//! with offsets relative to the start of the blob.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parameter_layout, VitConfig, VitModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NPVITCK1";
const MAGIC_STEM: &[u8] = b"NPVITCK";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: VitConfig,
    layer_norm_eps: f64,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

/// Serializes `model` into `out`.
pub fn write_checkpoint<W: Write>(model: &VitModel, mut out: W) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut offset = 0;
    for (name, t) in model.named_tensors() {
        let byte_len = t.numel() * 8;
        tensors.insert(
            name,
            TensorEntry {
                dtype: "f64".into(),
                shape: t.shape().to_vec(),
                byte_offset: offset,
                byte_len,
            },
        );
        offset += byte_len;
    }
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        layer_norm_eps: model.layer_norm_eps(),
        tensors,
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Header("header longer than u32::MAX bytes".into()))?;
    let mut bytes = Vec::with_capacity(12 + header.len() + offset);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in model.tensors() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&bytes)
        .map_err(|e| Error::io("<checkpoint writer>", e))
}

/// Parses a checkpoint, validating every tensor against the header config.
pub fn read_checkpoint(bytes: &[u8]) -> Result<VitModel> {
    let magic = bytes.get(..8).ok_or_else(|| Error::BadMagic {
        found: bytes.to_vec(),
    })?;
    if &magic[..7] != MAGIC_STEM {
        return Err(Error::BadMagic {
            found: magic.to_vec(),
        });
    }
    if magic[7] != CHECKPOINT_MAGIC[7] {
        return Err(Error::VersionMismatch {
            found: String::from_utf8_lossy(&magic[7..]).into_owned(),
            expected: "1".into(),
        });
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Header("file ends inside the header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::Header(format!("file ends inside the {header_len}-byte header")))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Header(format!("invalid JSON header: {e}")))?;
    header.config.validate()?;
    let blob = &bytes[12 + header_len..];

    let layout = parameter_layout(&header.config);
    if let Some(extra) = header
        .tensors
        .keys()
        .find(|k| !layout.iter().any(|(name, _)| name == *k))
    {
        return Err(Error::Header(format!("unexpected tensor `{extra}` in header")));
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, expected) in &layout {
        let entry = header
            .tensors
            .get(name)
            .ok_or_else(|| Error::Header(format!("tensor `{name}` missing from header")))?;
        if entry.dtype != "f64" {
            return Err(Error::Header(format!(
                "tensor `{name}` has dtype {}, only f64 is supported",
                entry.dtype
            )));
        }
        if entry.shape != *expected {
            return Err(Error::CheckpointShape {
                tensor: name.clone(),
                found: entry.shape.clone(),
                expected: expected.clone(),
            });
        }
        let numel: usize = expected.iter().product();
        if entry.byte_len != numel * 8 {
            return Err(Error::Header(format!(
                "tensor `{name}` declares {} bytes for {numel} values",
                entry.byte_len
            )));
        }
        let raw = blob
            .get(entry.byte_offset..entry.byte_offset + entry.byte_len)
            .ok_or_else(|| Error::Truncated {
                tensor: name.clone(),
            })?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor::new(expected.clone(), data)?);
    }
    VitModel::from_tensors(header.config, header.layer_norm_eps, tensors)
}

pub fn save_checkpoint(model: &VitModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VitModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VitModel {
        let config = VitConfig {
            image_size: 8,
            patch_size: 4,
            channels: 1,
            layers: 1,
            hidden: 4,
            ffn: 6,
            heads: 2,
            classes: 3,
        };
        VitModel::init(config, 3).unwrap()
    }

    fn encoded(model: &VitModel) -> Vec<u8> {
        let mut bytes = Vec::new();
        write_checkpoint(model, &mut bytes).unwrap();
        bytes
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = small();
        let back = read_checkpoint(&encoded(&model)).unwrap();
        assert_eq!(back.layer_norm_eps(), model.layer_norm_eps());
        for (a, b) in model.tensors().iter().zip(back.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encoded(&small());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::BadMagic { .. })));
        assert!(matches!(read_checkpoint(b"NP"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn other_version() {
        let mut bytes = encoded(&small());
        bytes[7] = b'2';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn truncated_blob_names_the_missing_tensor() {
        let model = small();
        let bytes = encoded(&model);
        let last = model.tensors().last().unwrap().numel() * 8;
        let err = read_checkpoint(&bytes[..bytes.len() - last]).unwrap_err();
        match err {
            Error::Truncated { tensor } => assert_eq!(tensor, "head.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_shape_disagreeing_with_config() {
        let model = small();
        let bytes = encoded(&model);
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + h]).unwrap();
        // the classifier bias of a 3-class model is declared with 4 entries
        let tampered = header.replace(
            r#""head.bias":{"dtype":"f64","shape":[3]"#,
            r#""head.bias":{"dtype":"f64","shape":[4]"#,
        );
        assert_ne!(tampered, header);
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[12 + h..]);
        assert!(matches!(read_checkpoint(&out), Err(Error::CheckpointShape { .. })));
    }
}
