//! Binary tensor files: a one-line JSON header, a newline, then raw
//! little-endian `f32` values in row-major `[B, N, D]` order.

use std::fs;
use std::path::Path;

use atc_core::FeatureMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub layout: String,
    pub endian: String,
}

impl TensorHeader {
    pub fn f32(shape: [usize; 3]) -> Self {
        Self {
            dtype: "f32".into(),
            shape: shape.to_vec(),
            layout: "row-major".into(),
            endian: "little".into(),
        }
    }
}

/// A `[B, N, D]` batch of `f32` token features.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(CliError::Invalid(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped matrices, rounding to `f32`.
    pub fn from_matrices(seqs: &[FeatureMatrix]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| CliError::Invalid("cannot write an empty batch".into()))?;
        let (n, d) = (first.n_tokens(), first.dim());
        if seqs.iter().any(|s| s.n_tokens() != n || s.dim() != d) {
            return Err(CliError::Invalid("ragged batch cannot be stored as a tensor".into()));
        }
        let data = seqs
            .iter()
            .flat_map(|s| s.as_slice().iter().map(|&v| v as f32))
            .collect();
        Self::new([seqs.len(), n, d], data)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CliError::Parse("missing header line".into()))?;
        let header: TensorHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| CliError::Parse(format!("bad tensor header: {e}")))?;
        if header.dtype != "f32" || header.layout != "row-major" || header.endian != "little" {
            return Err(CliError::Parse(format!(
                "unsupported tensor encoding {}/{}/{}",
                header.dtype, header.layout, header.endian
            )));
        }
        let shape: [usize; 3] = header
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| CliError::Parse(format!("expected a 3-d shape, got {:?}", header.shape)))?;
        let payload = &bytes[newline + 1..];
        let expected = 4 * shape.iter().product::<usize>();
        if payload.len() != expected {
            return Err(CliError::Parse(format!(
                "payload is {} bytes, shape {shape:?} needs {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&TensorHeader::f32(self.shape)).expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 1 + 4 * self.data.len());
        out.extend_from_slice(&header);
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    /// One feature matrix per batch entry.
    pub fn sequences(&self) -> Result<Vec<FeatureMatrix>> {
        let [b, n, d] = self.shape;
        (0..b)
            .map(|s| {
                let rows = self.data[s * n * d..(s + 1) * n * d]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                FeatureMatrix::new(rows, n, d).map_err(|e| CliError::Parse(format!("sequence {s}: {e}")))
            })
            .collect()
    }
}
