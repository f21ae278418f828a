//! Tensor container: dotted names mapped to shape-tagged little-endian `f32`
//! arrays plus one JSON metadata record, stored in the safetensors layout.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde_json::Value;

use crate::error::{Error, Result};

const METADATA_KEY: &str = "facetrace";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub tensors: BTreeMap<String, StoredTensor>,
    pub metadata: Value,
}

impl Container {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), StoredTensor { shape, data });
    }

    /// Removes a tensor, checking its shape.
    pub fn take(&mut self, name: &str, shape: &[usize], path: &Path) -> Result<Vec<f32>> {
        let t = self.tensors.remove(name).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("missing tensor `{name}`"),
        })?;
        if t.shape != shape {
            return Err(Error::config(format!(
                "tensor `{name}` in {} has shape {:?}, expected {:?}",
                path.display(),
                t.shape,
                shape
            )));
        }
        Ok(t.data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let raw = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), t.shape.clone(), raw)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, shape, raw)| {
                TensorView::new(Dtype::F32, shape.clone(), raw)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Data(format!("tensor `{name}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([(METADATA_KEY.to_string(), self.metadata.to_string())]);
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Data(format!("serialize: {e}")))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
        let metadata = match header.metadata().as_ref().and_then(|m| m.get(METADATA_KEY)) {
            Some(s) => serde_json::from_str(s).map_err(|e| bad(format!("metadata: {e}")))?,
            None => Value::Null,
        };
        let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(bad(format!("tensor `{name}` is {:?}, expected F32", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(
                name,
                StoredTensor {
                    shape: view.shape().to_vec(),
                    data,
                },
            );
        }
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let mut c = Container::default();
        c.insert(
            "a.weight",
            vec![2, 3],
            vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25],
        );
        c.insert("b.bias", vec![1], vec![0.1]);
        c.metadata = serde_json::json!({"epoch": 3, "nested": {"x": [1, 2]}});
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes, c.to_bytes().unwrap());
        let back = Container::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for (name, t) in &c.tensors {
            let b = &back.tensors[name];
            assert_eq!(b.shape, t.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&b.data), bits(&t.data));
        }
    }

    #[test]
    fn truncated_bytes_are_rejected() {
        let mut c = Container::default();
        c.insert("w", vec![4], vec![1.0; 4]);
        let bytes = c.to_bytes().unwrap();
        let err = Container::from_bytes(&bytes[..bytes.len() - 3], Path::new("cut")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }));
    }
}
