//! Named-parameter archive.
//!
//! Layout (little-endian): magic `DPCK`, version `u8`, manifest length `u32`
//! plus UTF-8 manifest text, parameter count `u32`, then per parameter:
//! name length `u16` plus UTF-8 name, rank `u8`, each dimension as `u32`,
//! and the values as `f32`.

use std::io::{Read, Write};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DPCK";
const VERSION: u8 = 1;

/// One archived tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchivedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_archive<W: Write>(mut w: W, manifest: &str, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(manifest.len() as u32).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for &v in &p.value {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_archive<R: Read>(mut r: R) -> Result<(String, Vec<ArchivedParam>)> {
    if &read_exact::<_, 4>(&mut r)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let [version] = read_exact::<_, 1>(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let manifest = String::from_utf8(read_vec(&mut r, len)?)
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let n = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let name = String::from_utf8(read_vec(&mut r, n)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let [rank] = read_exact::<_, 1>(&mut r)?;
        let shape = (0..rank)
            .map(|_| read_exact(&mut r).map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = read_vec(&mut r, numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(ArchivedParam { name, shape, values });
    }
    Ok((manifest, params))
}

/// Copies archived values into a store with the same names and shapes.
pub fn load_into(params: &mut ParamStore, archived: &[ArchivedParam]) -> Result<()> {
    if archived.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, network has {}",
            archived.len(),
            params.len()
        )));
    }
    for a in archived {
        let id = params
            .id(&a.name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {}", a.name)))?;
        let p = params.get_mut(id);
        if p.shape != a.shape {
            return Err(Error::Format(format!(
                "parameter {}: checkpoint shape {:?}, network shape {:?}",
                a.name, a.shape, p.shape
            )));
        }
        p.value = a.values.iter().map(|&v| v as f64).collect();
    }
    Ok(())
}
