//! Single-file checkpoints: little-endian `u64` header length, a JSON header,
//! then the tensors as little-endian `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT: &str = "touchgen-ckpt-1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the payload.
    pub offset: usize,
    /// Byte length.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    config: Value,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    /// Echo of the configuration that built the model.
    pub config: Value,
    /// Anything else needed to rebuild it (vocabulary, codec, fitted tables).
    pub meta: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: Value, meta: Value, tensors: BTreeMap<String, Tensor>) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            meta,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            let offset = payload.len();
            for v in &values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                dtype: "f32".into(),
                offset,
                len: values.len() * 4,
            });
        }
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Integrity(format!("checkpoint: {m}"));
        if bytes.len() < 8 {
            return Err(bad("truncated before header length".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if hlen > body.len() {
            return Err(bad(format!("header length {hlen} exceeds file")));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.format != FORMAT {
            return Err(bad(format!("unknown format {:?}", header.format)));
        }
        let payload = &body[hlen..];
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.dtype != "f32" || e.len != n * 4 || e.offset + e.len > payload.len() {
                return Err(bad(format!("bad directory entry for {}", e.name)));
            }
            let values: Vec<f32> = payload[e.offset..e.offset + e.len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(e.name.clone(), Tensor::from_vec(values, e.shape.clone(), &Device::Cpu)?);
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    /// Tensors cast to `dtype`, ready for [`crate::nn::ParamStore::assign`].
    pub fn tensors_as(&self, dtype: DType) -> Result<BTreeMap<String, Tensor>> {
        self.tensors
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.to_dtype(dtype)?)))
            .collect()
    }
}
