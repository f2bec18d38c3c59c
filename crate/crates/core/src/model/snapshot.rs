//! Flat binary persistence for parameter values.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FALW1"            5 bytes
//! count              u32
//! repeated count times:
//!   name_len         u32
//!   name             name_len bytes, UTF-8
//!   rank             u32
//!   dims             rank × u64
//!   values           product(dims) × f64
//! ```

use std::io::{self, Read, Write};

use crate::autodiff::{ParameterSet, Tensor};

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"FALW1";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] io::Error),
    #[error("bad snapshot magic {0:?}")]
    BadMagic([u8; 5]),
    #[error("parameter name is not UTF-8")]
    BadName,
    #[error("implausible snapshot field: {0}")]
    Corrupt(&'static str),
}

pub fn write_parameters<W: Write>(params: &ParameterSet, mut out: W) -> Result<(), SnapshotError> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_parameters<R: Read>(mut input: R) -> Result<ParameterSet, SnapshotError> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    let count = read_u32(&mut input)?;
    let mut set = ParameterSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        if name_len > 1 << 16 {
            return Err(SnapshotError::Corrupt("name length"));
        }
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| SnapshotError::BadName)?;
        let rank = read_u32(&mut input)? as usize;
        if rank > 8 {
            return Err(SnapshotError::Corrupt("rank"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut input)? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or(SnapshotError::Corrupt("dims"))?;
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let value = Tensor::new(shape, data).map_err(|_| SnapshotError::Corrupt("dims"))?;
        set.push(name, value);
    }
    Ok(set)
}
