//! Binary checkpoint archive: a version tag, string metadata and named
//! `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"QTAR"
//! version  u32            (currently 1)
//! tag      str
//! n_meta   u32, then n_meta × (key: str, value: str)
//! n_arrays u32, then n_arrays × (name: str, ndim: u32, dims: ndim × u64,
//!                                data: prod(dims) × f64)
//! str      u32 byte length followed by UTF-8 bytes
//! ```
//!
//! Entries are written in sorted key order, so equal archives encode to
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{write_bytes, DataError};

pub const MAGIC: &[u8; 4] = b"QTAR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub tag: String,
    pub metadata: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, NamedArray>,
}

fn bad(msg: impl Into<String>) -> DataError {
    DataError::Invalid(format!("archive: {}", msg.into()))
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated"))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| bad("truncated"))
    }

    fn count(&mut self, min_item_bytes: usize) -> Result<usize, DataError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.remaining() {
            return Err(bad("count exceeds remaining bytes"));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String, DataError> {
        let n = self.count(1)?;
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf).map_err(|_| bad("truncated"))?;
        String::from_utf8(buf).map_err(|_| bad("invalid UTF-8"))
    }
}

impl Archive {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<(), DataError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(bad("dims do not match data length"));
        }
        self.arrays.insert(name.into(), NamedArray { dims, data });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        fn put_str(out: &mut Vec<u8>, s: &str) {
            out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
            out.extend_from_slice(s.as_bytes());
        }
        let mut out = MAGIC.to_vec();
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        put_str(&mut out, &self.tag);
        out.write_u32::<LittleEndian>(self.metadata.len() as u32).unwrap();
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.write_u32::<LittleEndian>(self.arrays.len() as u32).unwrap();
        for (name, a) in &self.arrays {
            put_str(&mut out, name);
            out.write_u32::<LittleEndian>(a.dims.len() as u32).unwrap();
            for &d in &a.dims {
                out.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            for &x in &a.data {
                out.write_f64::<LittleEndian>(x).unwrap();
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut r = Reader { cur: Cursor::new(bytes) };
        r.cur.set_position(4);
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let tag = r.string()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.count(8)? {
            let k = r.string()?;
            let v = r.string()?;
            if metadata.insert(k.clone(), v).is_some() {
                return Err(bad(format!("duplicate metadata key `{k}`")));
            }
        }
        let mut arrays = BTreeMap::new();
        for _ in 0..r.count(8)? {
            let name = r.string()?;
            let ndim = r.count(8)?;
            let mut dims = Vec::with_capacity(ndim);
            let mut total: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?;
                total = total.checked_mul(d).ok_or_else(|| bad("dimension overflow"))?;
                dims.push(d);
            }
            if total.saturating_mul(8) > r.remaining() {
                return Err(bad(format!("array `{name}` exceeds remaining bytes")));
            }
            let mut data = vec![0.0; total];
            r.cur
                .read_f64_into::<LittleEndian>(&mut data)
                .map_err(|_| bad("truncated"))?;
            if arrays.insert(name.clone(), NamedArray { dims, data }).is_some() {
                return Err(bad(format!("duplicate array `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { tag, metadata, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_bytes(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}
