//! Flat binary tensor container.
//!
//! ```text
//! "HFT1"                      magic
//! u8                          element width in bytes (4 = f32, 8 = f64)
//! u64                         record count
//! per record:
//!   u32 name length, UTF-8 name
//!   u32 rank, rank × u64 extents
//!   payload, little-endian IEEE-754, row-major
//! ```
//! All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CONTAINER_MAGIC: &[u8; 4] = b"HFT1";

pub fn write_container<T: Real, W: Write>(w: &mut W, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.push(T::BYTES as u8);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated container while reading {what}: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8, what)?.try_into().expect("8 bytes")))
}

pub fn read_container<T: Real, R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<T>)>> {
    let magic = read_exact(r, 4, "magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Format(format!("bad tensor container magic {magic:?}")));
    }
    let width = read_exact(r, 1, "element width")?[0] as usize;
    if width != T::BYTES {
        return Err(Error::Format(format!(
            "container holds {width}-byte elements, expected {} ({})",
            T::BYTES,
            T::NAME
        )));
    }
    let count = read_u64(r, "record count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let name_len = read_u32(r, "name length")? as usize;
        let name = String::from_utf8(read_exact(r, name_len, "name")?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?;
        let rank = read_u32(r, "rank")? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(r, "extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let bytes = read_exact(r, numel(&shape) * T::BYTES, &name)?;
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn write_tensors<T: Real>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_container(&mut w, tensors)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensors<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_container(&mut BufReader::new(f))
}
