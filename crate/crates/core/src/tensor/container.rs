//! Versioned named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32 format_version
//! u32 tensor_count
//! repeat tensor_count:
//!     u32 name_len, name_len bytes of UTF-8 name
//!     u64 rows, u64 cols
//!     rows*cols f64 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Result, Tensor, TensorError};

pub const CONTAINER_VERSION: u32 = 1;

/// Ordered `(name, tensor)` list; names are unique.
pub type NamedTensors = Vec<(String, Tensor)>;

pub fn write_container<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    let count = u32::try_from(tensors.len()).map_err(|_| TensorError::Format("too many tensors".into()))?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u32::try_from(bytes.len()).map_err(|_| TensorError::Format("name too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<NamedTensors> {
    let version = read_u32(&mut r)?;
    if version != CONTAINER_VERSION {
        return Err(TensorError::Format(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(format!("name is not UTF-8: {e}")))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| TensorError::Format(format!("tensor {name} too large")))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if out.iter().any(|(existing, _): &(String, Tensor)| existing == &name) {
            return Err(TensorError::Format(format!("duplicate tensor name {name}")));
        }
        let t = Tensor::new(rows, cols, data).map_err(|e| TensorError::Format(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(TensorError::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn write_container_file(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write_container(BufWriter::new(File::create(path)?), tensors)
}

pub fn read_container_file(path: &Path) -> Result<NamedTensors> {
    read_container(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
