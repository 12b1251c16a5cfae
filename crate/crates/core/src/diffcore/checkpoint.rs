//! Parameter checkpoint file format.
//!
//! Layout: magic `CLPM`, version u32, count u32, then per parameter:
//! name length u16, name bytes, shape rank u8, dims u32 each, and a
//! little-endian f32 payload. Parameters are written in name order.

use std::io::Read;
use std::path::Path;

use super::buffer::{Buffer, Scalar};
use super::tape::ParamStore;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CLPM";
const VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Config(format!("parameter name too long: {name}")));
        }
        bytes.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name_bytes);
        let shape = value.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Config(format!("parameter rank too large: {name}")));
        }
        bytes.push(shape.len() as u8);
        for &d in shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in value.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = CountingReader { inner: std::io::BufReader::new(file), offset: 0 };

    let magic = reader.take::<4>("magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            format: "CLPM",
            offset: 0,
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = u32::from_le_bytes(reader.take::<4>("version")?);
    if version != VERSION {
        return Err(Error::Format {
            format: "CLPM",
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let count = u32::from_le_bytes(reader.take::<4>("count")?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(reader.take::<2>("name length")?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        reader.read_exact_at(&mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            format: "CLPM",
            offset: reader.offset,
            detail: "parameter name is not utf-8".into(),
        })?;
        let rank = reader.take::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(reader.take::<4>("dim")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let raw = f32::from_le_bytes(reader.take::<4>("payload")?);
            data.push(S::from_f64(raw as f64));
        }
        store.register(&name, Buffer::new(data, shape)?)?;
    }
    Ok(store)
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.read_exact_at(&mut buf, what)?;
        Ok(buf)
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            format: "CLPM",
            offset: at,
            detail: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

/// Serializes without touching the filesystem, for hashing and tests.
pub fn checkpoint_bytes<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(value.shape().len() as u8);
        for &d in value.shape() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in value.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.clpm");
        let mut store: ParamStore<f32> = ParamStore::new();
        store
            .register("net.w0", Buffer::matrix(vec![1.5, -2.25, 0.125, 9.0], 2, 2).unwrap())
            .unwrap();
        store.register("net.b0", Buffer::vector(vec![0.5, -0.5])).unwrap();
        write_checkpoint(&store, &path).unwrap();
        let loaded: ParamStore<f32> = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.value("net.w0"), store.value("net.w0"));
        assert_eq!(loaded.value("net.b0"), store.value("net.b0"));
        // Re-serialization is bitwise identical.
        assert_eq!(checkpoint_bytes(&store), checkpoint_bytes(&loaded));
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.clpm");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = read_checkpoint::<f32>(&path).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.clpm");
        let mut store: ParamStore<f32> = ParamStore::new();
        store.register("w", Buffer::vector(vec![1.0, 2.0, 3.0])).unwrap();
        write_checkpoint(&store, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        let err = read_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
