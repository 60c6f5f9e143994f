//! On-disk tensor format ("HMPT") plus flat key=value sidecar files.
//!
//! HMPT layout: magic bytes `HMPT`, u8 rank, rank little-endian u32 dims,
//! then product(dims) little-endian f32 values. Storage is f32 regardless of
//! the in-memory scalar; f64 tensors truncate on write and widen on read.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HMPT";
const MAX_RANK: usize = 8;

pub fn write_hmpt<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if t.rank() > MAX_RANK {
        return Err(Error::invalid(format!("HMPT rank limit is {MAX_RANK}, got {}", t.rank())));
    }
    let mut buf = Vec::with_capacity(4 + 1 + 4 * t.rank() + 4 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

pub fn read_hmpt<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let fail = |reason: &str| Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(fail("missing HMPT magic"));
    }
    let rank = bytes[4] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(fail(&format!("rank {rank} out of range 1..={MAX_RANK}")));
    }
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(fail("truncated dim table"));
    }
    let mut shape = Vec::with_capacity(rank);
    for r in 0..rank {
        let off = 5 + 4 * r;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(fail("zero dim"));
        }
        shape.push(d);
    }
    let count: usize = shape.iter().product();
    if bytes.len() != header + 4 * count {
        return Err(fail(&format!(
            "payload length {} does not match {count} f32 values",
            bytes.len() - header
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = header + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        data.push(T::of_f64(v as f64));
    }
    Tensor::new(shape, data).map_err(|e| fail(&e.to_string()))
}

/// Writes `key=value` lines, one per pair, in the given order.
pub fn write_kv(path: impl AsRef<Path>, pairs: &[(&str, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_kv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("line {}: expected key=value, got `{line}`", lineno + 1),
            });
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn hmpt_round_trips_exactly() {
        let dir = std::env::temp_dir().join("hmpt_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.hmpt");
        let mut rng = Rng::new(77);
        let t: Tensor<f32> = rng.uniform_tensor([3, 4, 2], -5.0, 5.0);
        write_hmpt(&path, &t).unwrap();
        let back: Tensor<f32> = read_hmpt(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn hmpt_rejects_bad_magic_and_truncation() {
        let dir = std::env::temp_dir().join("hmpt_io_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.hmpt");
        std::fs::write(&bad, b"NOPE\x01\x01\x00\x00\x00").unwrap();
        assert!(read_hmpt::<f32>(&bad).is_err());

        let trunc = dir.join("trunc.hmpt");
        let t: Tensor<f32> = Tensor::full([2, 2], 1.0);
        write_hmpt(&trunc, &t).unwrap();
        let mut bytes = std::fs::read(&trunc).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&trunc, &bytes).unwrap();
        let err = read_hmpt::<f32>(&trunc).unwrap_err().to_string();
        assert!(err.contains("payload length"), "{err}");
    }

    #[test]
    fn kv_round_trip() {
        let dir = std::env::temp_dir().join("hmpt_kv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("head.meta");
        write_kv(&path, &[("bias", "0.25".into()), ("delta", "1".into())]).unwrap();
        let pairs = read_kv(&path).unwrap();
        assert_eq!(pairs[0], ("bias".to_string(), "0.25".to_string()));
        assert_eq!(pairs[1], ("delta".to_string(), "1".to_string()));
    }
}
