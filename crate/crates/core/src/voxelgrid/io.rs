//! Grid file format: magic `CVGF`, version u32, cells u32, feature dim u32,
//! dtype u8 (0 = f32), then the little-endian payload in cell-then-feature
//! order.

use std::io::Read;
use std::path::Path;

use super::{FeatureGrid, GridSpec};
use crate::diffcore::Scalar;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CVGF";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_grid<S: Scalar>(grid: &FeatureGrid<S>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(17 + grid.values().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(grid.spec().cells as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.spec().feature_dim as u32).to_le_bytes());
    bytes.push(DTYPE_F32);
    for &v in grid.values() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_grid<S: Scalar>(path: &Path) -> Result<FeatureGrid<S>> {
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |offset: u64, detail: String| Error::Format { format: "CVGF", offset, detail };
    if bytes.len() < 17 {
        return Err(fail(bytes.len() as u64, "truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let cells = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes[16] != DTYPE_F32 {
        return Err(fail(16, format!("unsupported dtype {}", bytes[16])));
    }
    let spec = GridSpec::new(cells, dim)?;
    let expected = 17 + spec.value_count() * 4;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let values = bytes[17..]
        .chunks_exact(4)
        .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    FeatureGrid::from_values(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.cvgf");
        let spec = GridSpec::new(3, 2).unwrap();
        let values: Vec<f32> = (0..spec.value_count()).map(|i| i as f32 * 0.25 - 3.0).collect();
        let grid = FeatureGrid::from_values(spec, values).unwrap();
        write_grid(&grid, &path).unwrap();
        let loaded: FeatureGrid<f32> = read_grid(&path).unwrap();
        assert_eq!(grid, loaded);
        let bytes1 = std::fs::read(&path).unwrap();
        write_grid(&loaded, &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cvgf");
        std::fs::write(&path, vec![0u8; 32]).unwrap();
        let err = read_grid::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }
}
