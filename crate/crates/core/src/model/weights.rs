//! Weight file: a text header followed by a little-endian `f64` blob.
//!
//! ```text
//! elbert-weights v1
//! config.depth = 12
//! ...                                  arbitrary `key = value` metadata
//! tensor token_embedding 512 64 0      name rows cols byte-offset
//! ...
//! end
//! <blob>
//! ```
//!
//! Byte offsets are relative to the first byte after the `end` line, and
//! tensors are laid out in manifest order with no gaps.

use std::fs;
use std::path::Path;

use super::params::{shapes, Parameters};
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "elbert-weights v1";
const END: &str = "end";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl WeightFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => *v = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) || k.contains('=') {
                return Err(Error::WeightFile(format!("invalid metadata key {k:?}")));
            }
            if v.contains('\n') {
                return Err(Error::WeightFile(format!("metadata value for {k} contains a newline")));
            }
            header.push_str(&format!("{k} = {v}\n"));
        }
        let mut offset = 0usize;
        for (name, m) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::WeightFile(format!("invalid tensor name {name:?}")));
            }
            header.push_str(&format!("tensor {name} {} {} {offset}\n", m.rows(), m.cols()));
            offset += m.len() * 8;
        }
        header.push_str(END);
        header.push('\n');

        let mut bytes = header.into_bytes();
        bytes.reserve(offset);
        for (_, m) in &self.tensors {
            for v in m.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::WeightFile(m);
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("header ended without `end` line".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| bad("header is not UTF-8".into()))?
                .to_string();
            *pos += nl + 1;
            Ok(line)
        };

        if next_line(&mut pos)? != MAGIC {
            return Err(bad(format!("missing `{MAGIC}` magic line")));
        }
        let mut meta = Vec::new();
        let mut manifest: Vec<(String, usize, usize, usize)> = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == END {
                break;
            }
            if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let nums: Option<Vec<usize>> = parts.get(1..4).map(|p| p.iter().filter_map(|s| s.parse().ok()).collect());
                match nums {
                    Some(n) if parts.len() == 4 && n.len() == 3 => {
                        manifest.push((parts[0].to_string(), n[0], n[1], n[2]));
                    }
                    _ => return Err(bad(format!("bad tensor line {line:?}"))),
                }
            } else if let Some((k, v)) = line.split_once(" = ") {
                meta.push((k.to_string(), v.to_string()));
            } else {
                return Err(bad(format!("unrecognized header line {line:?}")));
            }
        }

        let blob = &bytes[pos..];
        let mut expected_offset = 0usize;
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, rows, cols, offset) in manifest {
            if offset != expected_offset {
                return Err(bad(format!("tensor {name} at offset {offset}, expected {expected_offset}")));
            }
            let n = rows * cols;
            let end = offset + n * 8;
            let raw = blob
                .get(offset..end)
                .ok_or_else(|| bad(format!("blob truncated inside tensor {name}")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = Matrix::new(rows, cols, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            tensors.push((name, m));
            expected_offset = end;
        }
        if expected_offset != blob.len() {
            return Err(bad(format!(
                "{} trailing bytes after the last tensor",
                blob.len() - expected_offset
            )));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Model {
    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            meta: self.config().to_pairs(),
            tensors: self
                .params()
                .entries()
                .into_iter()
                .map(|(n, m)| (n.to_string(), m.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model from the `config.*` keys and parameter tensors of
    /// `file`; unrelated metadata and tensors are ignored.
    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        let cfg = ModelConfig::from_pairs(file.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let mut missing = None;
        let params: Parameters = shapes(&cfg).map(|name, &(r, c)| match file.tensor(name) {
            Some(m) if m.shape() == (r, c) => m.clone(),
            _ => {
                missing.get_or_insert(name);
                Matrix::zeros(r, c)
            }
        });
        if let Some(name) = missing {
            return Err(Error::WeightFile(format!("tensor {name} missing or misshapen")));
        }
        Model::new(cfg, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let cfg = ModelConfig { depth: 3, hidden: 8, heads: 2, ffn: 16, vocab: 12, max_seq_len: 6, classes: 3 };
        Model::init(cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny();
        let mut file = model.to_weight_file();
        file.set_meta("vocab.tokens", "a b c");
        let bytes = file.to_bytes().unwrap();
        let back = WeightFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = Model::from_weight_file(&back).unwrap();
        for ((_, a), (_, b)) in restored.params().entries().into_iter().zip(model.params().entries()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn header_is_readable_text() {
        let bytes = tiny().to_weight_file().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.starts_with("elbert-weights v1\nconfig.depth = 3\n"));
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = tiny().to_weight_file().to_bytes().unwrap();
        assert!(WeightFile::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WeightFile::from_bytes(&extra).is_err());
        assert!(WeightFile::from_bytes(b"nonsense\n").is_err());
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let mut file = tiny().to_weight_file();
        file.tensors.retain(|(n, _)| n != "encoder.key");
        assert!(matches!(Model::from_weight_file(&file), Err(Error::WeightFile(_))));
    }
}
