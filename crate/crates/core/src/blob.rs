//! Binary tensor blob format and dataset manifest used repo-wide.
//!
//! Layout: magic bytes `RFOT`, version `u16` little-endian (1 = f32
//! payload, 2 = f64 payload), rank `u8`, one `u32` little-endian per
//! dimension, then the row-major payload in little-endian floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const BLOB_MAGIC: [u8; 4] = *b"RFOT";
pub const BLOB_VERSION_F32: u16 = 1;
pub const BLOB_VERSION_F64: u16 = 2;

/// Writes an f32 tensor blob.
pub fn write_blob_f32(path: &Path, data: &ArrayD<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, BLOB_VERSION_F32, data.shape())?;
    // Standard layout keeps the payload row-major.
    for v in data.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an f64 tensor blob (used for high-precision oracle dumps).
pub fn write_blob_f64(path: &Path, data: &ArrayD<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, BLOB_VERSION_F64, data.shape())?;
    for v in data.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a blob of either precision into f64.
pub fn read_blob_f64(path: &Path) -> Result<ArrayD<f64>> {
    let (version, shape, payload) = read_raw(path)?;
    let data = match version {
        BLOB_VERSION_F32 => payload_f32(&payload, path)?.into_iter().map(f64::from).collect(),
        BLOB_VERSION_F64 => payload_f64(&payload, path)?,
        v => {
            return Err(CoreError::CorruptBlob(format!(
                "{}: unknown blob version {v}",
                path.display()
            )))
        }
    };
    finish(path, shape, data)
}

/// Reads a blob of either precision into f32.
pub fn read_blob_f32(path: &Path) -> Result<ArrayD<f32>> {
    let (version, shape, payload) = read_raw(path)?;
    let data = match version {
        BLOB_VERSION_F32 => payload_f32(&payload, path)?,
        BLOB_VERSION_F64 => payload_f64(&payload, path)?.into_iter().map(|v| v as f32).collect(),
        v => {
            return Err(CoreError::CorruptBlob(format!(
                "{}: unknown blob version {v}",
                path.display()
            )))
        }
    };
    finish(path, shape, data)
}

fn write_header<W: Write>(w: &mut W, version: u16, shape: &[usize]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(CoreError::InvalidArgument(format!("rank {} too large", shape.len())));
    }
    w.write_all(&BLOB_MAGIC)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| CoreError::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_raw(path: &Path) -> Result<(u16, Vec<usize>, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::CorruptBlob(format!("{}: truncated header", path.display())))?;
    if magic != BLOB_MAGIC {
        return Err(CoreError::CorruptBlob(format!("{}: bad magic {magic:?}", path.display())));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2)
        .map_err(|_| CoreError::CorruptBlob(format!("{}: truncated version", path.display())))?;
    let version = u16::from_le_bytes(buf2);
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| CoreError::CorruptBlob(format!("{}: truncated rank", path.display())))?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)
            .map_err(|_| CoreError::CorruptBlob(format!("{}: truncated dims", path.display())))?;
        shape.push(u32::from_le_bytes(buf4) as usize);
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((version, shape, payload))
}

fn payload_f32(payload: &[u8], path: &Path) -> Result<Vec<f32>> {
    if payload.len() % 4 != 0 {
        return Err(CoreError::CorruptBlob(format!("{}: payload not f32-aligned", path.display())));
    }
    Ok(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn payload_f64(payload: &[u8], path: &Path) -> Result<Vec<f64>> {
    if payload.len() % 8 != 0 {
        return Err(CoreError::CorruptBlob(format!("{}: payload not f64-aligned", path.display())));
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn finish<T>(path: &Path, shape: Vec<usize>, data: Vec<T>) -> Result<ArrayD<T>> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(CoreError::CorruptBlob(format!(
            "{}: payload has {} elements, shape {:?} needs {}",
            path.display(),
            data.len(),
            shape,
            expected
        )));
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| CoreError::CorruptBlob(format!("{}: {e}", path.display())))
}

/// One named tensor within a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    /// What the tensor holds, e.g. `frames_h`, `poses`, `heatmaps_v`.
    pub role: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

/// JSON manifest listing the blobs of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Free-form, deterministic metadata recorded by the producer.
    pub meta: serde_json::Value,
    pub blobs: Vec<BlobEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CoreError::Manifest(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn find(&self, role: &str) -> Result<&BlobEntry> {
        self.blobs
            .iter()
            .find(|b| b.role == role)
            .ok_or_else(|| CoreError::Manifest(format!("manifest has no blob with role '{role}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn f32_round_trip_bit_exact() {
        let dir = tempdir();
        let path = dir.join("t.rfot");
        let data =
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0f32, -2.5, 3.25, 0.0, 5.5, -6.125])
                .unwrap();
        write_blob_f32(&path, &data).unwrap();
        let back = read_blob_f32(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn f64_round_trip_bit_exact() {
        let dir = tempdir();
        let path = dir.join("t64.rfot");
        let data = ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0f64, 1e-300, -2.2, 7.0]).unwrap();
        write_blob_f64(&path, &data).unwrap();
        let back = read_blob_f64(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempdir();
        let path = dir.join("bad.rfot");
        std::fs::write(&path, b"NOPE\x01\x00\x01\x02\x00\x00\x00").unwrap();
        match read_blob_f32(&path) {
            Err(CoreError::CorruptBlob(_)) => {}
            other => panic!("expected corrupt blob, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempdir();
        let path = dir.join("short.rfot");
        let data = ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0f32; 4]).unwrap();
        write_blob_f32(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_blob_f32(&path), Err(CoreError::CorruptBlob(_))));
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rfot-blob-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
