//! Binary checkpoint container: a flat list of named real arrays.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes   "ADDPSCKP"
//! version u32       1
//! count   u32       number of arrays
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f64 × prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"ADDPSCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing array `{0}`")]
    Missing(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let name = name.into();
        self.arrays.retain(|a| a.name != name);
        self.arrays.push(NamedArray { name, shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            w.write_all(&(a.name.len() as u32).to_le_bytes())?;
            w.write_all(a.name.as_bytes())?;
            w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = read_u32(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Self { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut c = Checkpoint::new();
        c.insert("w", vec![1], vec![1.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 4 + 1 + 4 + 8 + 8);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(
            Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&9u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::read_from(&buf[..]),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    proptest! {
        #[test]
        fn round_trip(arrays in proptest::collection::vec(
            ("[a-z.0-9]{1,12}", proptest::collection::vec(-1e6f64..1e6, 0..20)), 0..6)) {
            let mut c = Checkpoint::new();
            for (name, data) in &arrays {
                c.insert(name.clone(), vec![data.len()], data.clone());
            }
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            prop_assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), c);
        }
    }
}
