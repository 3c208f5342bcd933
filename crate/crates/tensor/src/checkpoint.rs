//! Checkpoint serialization.
//!
//! Layout, all integers unsigned 64-bit little-endian:
//!   magic "DTRN0001" | count | count records of
//!   name_len | name (UTF-8) | rank | dims... | values (f32 little-endian,
//!   row-major).
//!
//! Parameters are written in store insertion order, so identical runs produce
//! byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::TensorError;
use crate::param::ParamStore;
use crate::real::Real;

pub const MAGIC: [u8; 8] = *b"DTRN0001";

/// One deserialized parameter record.
#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<(), TensorError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value().shape();
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value().data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_entries(path: &Path) -> Result<Vec<Entry>, TensorError> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(TensorError::Checkpoint {
            detail: "bad magic".into(),
        });
    }
    let count = cur.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = cur.u64()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| {
            TensorError::Checkpoint {
                detail: "parameter name is not UTF-8".into(),
            }
        })?;
        let rank = cur.u64()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Checkpoint {
                detail: format!("shape product overflow for {name:?}"),
            })?;
        let raw = cur.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Checkpoint {
            detail: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(entries)
}

/// Restores values into a store whose registry must match the file exactly:
/// same parameter names, same shapes, nothing extra on either side. Optimizer
/// moments and step counters reset to zero.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<(), TensorError> {
    let entries = read_entries(path)?;
    if entries.len() != store.len() {
        return Err(TensorError::Checkpoint {
            detail: format!(
                "file holds {} parameters, model expects {}",
                entries.len(),
                store.len()
            ),
        });
    }
    // Validate the full set before mutating anything.
    for e in &entries {
        let id = store.id(&e.name).ok_or_else(|| TensorError::Checkpoint {
            detail: format!("parameter {:?} not present in model", e.name),
        })?;
        if store.value(id).shape() != e.shape.as_slice() {
            return Err(TensorError::Checkpoint {
                detail: format!(
                    "parameter {:?} has shape {:?} in file, {:?} in model",
                    e.name,
                    e.shape,
                    store.value(id).shape()
                ),
            });
        }
    }
    for e in &entries {
        let id = store.id(&e.name).expect("validated above");
        let dst = store.value_mut(id).data_mut();
        for (d, &s) in dst.iter_mut().zip(&e.data) {
            *d = T::of(s as f64);
        }
    }
    store.reset_opt_state();
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint {
                detail: "truncated file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}
