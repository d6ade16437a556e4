//! Named parameter storage and its on-disk container.
//!
//! The container is a pair of files: a JSON manifest mapping each name to
//! `{shape, dtype: "f32", offset, length}` and a sibling blob with the same stem
//! and a `.bin` extension holding little-endian `f32` values. Offsets and lengths
//! count elements, not bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub length: usize,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any existing entry of the same name.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn view(&self) -> WeightView<'_> {
        WeightView {
            store: self,
            prefix: String::new(),
        }
    }

    /// Manifest and blob for the current contents, entries packed in name order.
    pub fn to_container(&self) -> (Manifest, Vec<u8>) {
        let mut manifest = Manifest::new();
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let length = t.data().len();
            manifest.insert(
                name.clone(),
                ManifestEntry {
                    shape: t.shape().dims().to_vec(),
                    dtype: "f32".into(),
                    offset,
                    length,
                },
            );
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += length;
        }
        (manifest, blob)
    }

    /// Rebuilds a store from a manifest and blob. Shapes of rank 1..=4 are
    /// left-padded with ones.
    pub fn from_container(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        if !blob.len().is_multiple_of(4) {
            return Err(Error::Container(format!(
                "blob length {} is not a multiple of 4",
                blob.len()
            )));
        }
        let total = blob.len() / 4;
        let mut store = WeightStore::new();
        for (name, e) in manifest {
            if e.dtype != "f32" {
                return Err(Error::Container(format!("`{name}`: unsupported dtype {}", e.dtype)));
            }
            if e.shape.is_empty() || e.shape.len() > 4 {
                return Err(Error::Container(format!(
                    "`{name}`: rank {} outside 1..=4",
                    e.shape.len()
                )));
            }
            let mut dims = [1usize; 4];
            dims[4 - e.shape.len()..].copy_from_slice(&e.shape);
            let shape = Shape::from(dims);
            if shape.numel() != e.length {
                return Err(Error::Container(format!(
                    "`{name}`: length {} does not match shape {:?}",
                    e.length, e.shape
                )));
            }
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= total)
                .ok_or_else(|| {
                    Error::Container(format!(
                        "`{name}`: range {}+{} exceeds blob of {total} elements",
                        e.offset, e.length
                    ))
                })?;
            let data = blob[e.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    /// Writes `path` (manifest) and its `.bin` sibling.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (manifest, blob) = self.to_container();
        let json = serde_json::to_vec_pretty(&manifest)?;
        write_atomic(&blob_path(path), &blob)?;
        write_atomic(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let bin = blob_path(path);
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::from_container(&manifest, &blob)
    }
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read-only window onto a store under a dot-separated prefix.
#[derive(Debug, Clone)]
pub struct WeightView<'a> {
    store: &'a WeightStore,
    prefix: String,
}

impl<'a> WeightView<'a> {
    pub fn scope(&self, name: &str) -> WeightView<'a> {
        WeightView {
            store: self.store,
            prefix: self.full_name(name),
        }
    }

    pub fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.store.get(&self.full_name(name))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: impl Into<Shape>) -> Result<&'a Tensor> {
        let expected = shape.into();
        let t = self.get(name)?;
        if t.shape() != expected {
            return Err(Error::WeightShape {
                name: self.full_name(name),
                found: t.shape(),
                expected,
            });
        }
        Ok(t)
    }

    /// Fetches a vector stored as `(1, 1, 1, len)`.
    pub fn vector(&self, name: &str, len: usize) -> Result<&'a [f32]> {
        Ok(self.expect(name, [1, 1, 1, len])?.data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert(
            "b.kernel",
            Tensor::from_fn([2, 3, 1, 1], |o, i, _, _| (o * 3 + i) as f32 - 2.5).unwrap(),
        );
        s.insert("a.bias", Tensor::new([1, 1, 1, 2], vec![0.5, -1.0e-8]).unwrap());
        s
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let store = sample_store();
        store.save(&path).unwrap();
        assert!(dir.path().join("w.bin").exists());
        assert_eq!(WeightStore::load(&path).unwrap(), store);
    }

    #[test]
    fn manifest_order_is_irrelevant_and_ranks_pad() {
        let mut manifest = Manifest::new();
        manifest.insert(
            "z".into(),
            ManifestEntry { shape: vec![2], dtype: "f32".into(), offset: 0, length: 2 },
        );
        manifest.insert(
            "a".into(),
            ManifestEntry { shape: vec![1, 1], dtype: "f32".into(), offset: 2, length: 1 },
        );
        let blob: Vec<u8> = [1.0f32, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let s = WeightStore::from_container(&manifest, &blob).unwrap();
        assert_eq!(s.get("z").unwrap().shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(s.get("a").unwrap().data(), &[3.0]);
    }

    #[test]
    fn container_validation() {
        let (mut manifest, blob) = sample_store().to_container();
        manifest.get_mut("a.bias").unwrap().offset = 100;
        assert!(matches!(
            WeightStore::from_container(&manifest, &blob),
            Err(Error::Container(_))
        ));
        let (mut manifest, blob) = sample_store().to_container();
        manifest.get_mut("a.bias").unwrap().dtype = "f16".into();
        assert!(WeightStore::from_container(&manifest, &blob).is_err());
        let (mut manifest, blob) = sample_store().to_container();
        manifest.get_mut("a.bias").unwrap().length = 3;
        assert!(WeightStore::from_container(&manifest, &blob).is_err());
    }

    #[test]
    fn view_scoping_and_shape_checks() {
        let s = sample_store();
        let v = s.view().scope("b");
        assert_eq!(v.full_name("kernel"), "b.kernel");
        assert!(v.expect("kernel", [2, 3, 1, 1]).is_ok());
        match v.expect("kernel", [2, 3, 3, 3]) {
            Err(Error::WeightShape { name, .. }) => assert_eq!(name, "b.kernel"),
            other => panic!("unexpected {other:?}"),
        }
        match s.view().scope("nope").get("kernel") {
            Err(Error::MissingWeight(name)) => assert_eq!(name, "nope.kernel"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.view().vector("a.bias", 2).unwrap(), &[0.5, -1.0e-8]);
    }
}
