//! Binary checkpoint container.
//!
//! Layout (all integers little-endian): magic `PASR`, format version `u32`,
//! tensor count `u32`, then per tensor: name length `u32` + UTF-8 name,
//! rank `u32`, dims `u64 × rank`, values as 32-bit little-endian floats.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: [u8; 4] = *b"PASR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: bad magic bytes")]
    BadMagic { path: String },
    #[error("checkpoint {path}: unsupported format version {found}")]
    BadVersion { path: String, found: u32 },
    #[error("checkpoint {path}: tensor {name:?} is not valid UTF-8")]
    BadName { path: String, name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn save_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<(), CheckpointError> {
    let io_err = |e| CheckpointError::Io { path: path.display().to_string(), source: e };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
    write(&MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        write(&(t.name.len() as u32).to_le_bytes())?;
        write(t.name.as_bytes())?;
        write(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            write(&(d as u64).to_le_bytes())?;
        }
        debug_assert_eq!(t.shape.iter().product::<usize>(), t.values.len());
        for &v in &t.values {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NamedTensor>, CheckpointError> {
    let io_err = |e| CheckpointError::Io { path: path.display().to_string(), source: e };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    fn read_exact<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    let magic = read_exact(&mut r, 4).map_err(io_err)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path.display().to_string() });
    }
    let version = read_u32(&mut r).map_err(io_err)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion {
            path: path.display().to_string(),
            found: version,
        });
    }
    let count = read_u32(&mut r).map_err(io_err)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(io_err)? as usize;
        let name_bytes = read_exact(&mut r, name_len).map_err(io_err)?;
        let name = String::from_utf8(name_bytes).map_err(|e| CheckpointError::BadName {
            path: path.display().to_string(),
            name: String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })?;
        let rank = read_u32(&mut r).map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(io_err)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io_err)?;
            values.push(f32::from_le_bytes(b));
        }
        tensors.push(NamedTensor { name, shape, values });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pasr");
        let tensors = vec![
            NamedTensor {
                name: "enc.tok_emb".to_string(),
                shape: vec![3, 2],
                values: vec![0.1, -0.2, f32::MIN_POSITIVE, 1e30, -0.0, 3.5],
            },
            NamedTensor { name: "dec.ln_f.g".to_string(), shape: vec![4], values: vec![1.0; 4] },
        ];
        save_checkpoint(&path, &tensors).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), tensors.len());
        for (a, b) in loaded.iter().zip(&tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pasr");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic { .. })));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PASR");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadVersion { found: 9, .. })
        ));
    }
}
