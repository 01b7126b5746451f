//! Self-describing binary container used for every file the tool writes:
//! landmark sequences, audio features, generated motion, datasets and
//! checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 4     | magic `GGEN`                                         |
//! | 4     | format version, `u32` (currently 1)                  |
//! | 8     | header length `n`, `u64`                             |
//! | n     | UTF-8 JSON header: `kind`, `meta`, `arrays`          |
//! | ...   | array payloads in header order, `f64`, row-major     |
//!
//! `arrays` lists `{ "name": .., "shape": [..] }`; payload sizes follow from
//! the shapes. Values are stored as raw IEEE-754 bits, so reading back what
//! was written is exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GGEN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub array: ArrayD<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Map<String, Value>,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Map<String, Value>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Container { path: path.to_path_buf(), detail: detail.into() }
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container { kind: kind.into(), meta: Map::new(), arrays: Vec::new() }
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) {
        self.meta.insert(key.to_string(), serde_json::to_value(value).expect("meta serializes"));
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Dataset(format!("{} container lacks meta field {key:?}", self.kind)))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Dataset(format!("meta field {key:?}: {e}")))
    }

    pub fn meta_opt<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<Option<T>> {
        match self.meta.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.meta(key).map(Some),
        }
    }

    pub fn push_array(&mut self, name: &str, array: ArrayViewD<'_, f64>) {
        self.arrays.push(NamedArray { name: name.to_string(), array: array.to_owned() });
    }

    pub fn array(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.array)
            .ok_or_else(|| Error::Dataset(format!("{} container lacks array {name:?}", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(bad(path, format!("expected a {kind:?} container, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry { name: a.name.clone(), shape: a.array.shape().to_vec() })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        for a in &self.arrays {
            for &v in a.array.iter() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(path, format!("reading magic: {e}")))?;
        if &magic != MAGIC {
            return Err(bad(path, "not a container (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| bad(path, e.to_string()))?;
        if version != FORMAT_VERSION {
            return Err(bad(path, format!("unsupported format version {version}")));
        }
        let len = r.read_u64::<LittleEndian>().map_err(|e| bad(path, e.to_string()))? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(|e| bad(path, format!("reading header: {e}")))?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(path, format!("header: {e}")))?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data)
                .map_err(|e| bad(path, format!("array {:?}: {e}", entry.name)))?;
            let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("size from shape");
            arrays.push(NamedArray { name: entry.name, array });
        }
        Ok(Container { kind: header.kind, meta: header.meta, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| bad(path, e.to_string()))?;
        Container::read_from(std::io::BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_foreign_bytes() {
        let p = Path::new("x");
        assert!(Container::read_from(&b"NOPE\x01\0\0\0"[..], p).is_err());
        let mut bytes = Vec::new();
        Container::new("k").write_to(&mut bytes).unwrap();
        bytes[4] = 9;
        assert!(Container::read_from(&bytes[..], p).is_err());
    }

    #[test]
    fn truncated_payload_is_error() {
        let mut c = Container::new("k");
        c.push_array("a", ndarray::Array1::from(vec![1.0, 2.0]).into_dyn().view());
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Container::read_from(&bytes[..], Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            rows in 0usize..6,
            cols in 1usize..5,
            seed in proptest::collection::vec(proptest::num::f64::ANY, 30),
            fps in proptest::num::f64::NORMAL,
            name in "[a-z_]{1,8}",
        ) {
            let data: Vec<f64> = seed.iter().cycle().take(rows * cols).copied().collect();
            let arr = ndarray::Array2::from_shape_vec((rows, cols), data).unwrap();
            let mut c = Container::new("landmarks");
            c.set_meta("fps", &fps);
            c.set_meta("name", &name);
            c.push_array(&name, arr.view().into_dyn());
            let mut bytes = Vec::new();
            c.write_to(&mut bytes).unwrap();
            let back = Container::read_from(&bytes[..], Path::new("mem")).unwrap();
            prop_assert_eq!(back.meta::<f64>("fps").unwrap().to_bits(), fps.to_bits());
            let a = back.array(&name).unwrap();
            prop_assert_eq!(a.shape(), arr.shape());
            for (x, y) in a.iter().zip(arr.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
