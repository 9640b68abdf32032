//! Flat binary checkpoints.
//!
//! ```text
//! "COREW01"
//! repeated until EOF:
//!   name_len: u16 LE, name: utf-8 bytes,
//!   rank: u8, extents: rank x u32 LE,
//!   payload: product(extents) x f64 LE
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 7] = b"COREW01";

pub fn write_records<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    for e in store.entries() {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", e.name)))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name)?;
        let rank = u8::try_from(e.value.rank()).map_err(|_| Error::Checkpoint("rank exceeds 255".into()))?;
        out.write_all(&[rank])?;
        for &d in e.value.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint("extent exceeds u32".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in e.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(store))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses every `(name, tensor)` record.
pub fn read_records(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < WEIGHTS_MAGIC.len() || &bytes[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: WEIGHTS_MAGIC.len() };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
            .to_owned();
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload overflow".into()))?)?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Overwrites every entry of `store` from a checkpoint with the same names
/// and shapes in the same order.
pub fn load_into(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let records = read_records(bytes)?;
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} records, model has {}",
            records.len(),
            store.len()
        )));
    }
    for (entry, (name, t)) in store.entries_mut().iter_mut().zip(records) {
        if entry.name != name || entry.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "record {name} {:?} does not match parameter {} {:?}",
                t.shape(),
                entry.name,
                entry.value.shape()
            )));
        }
        entry.value = t;
        entry.grad = None;
    }
    Ok(())
}

pub fn load_file(store: &mut ParamStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_into(store, &bytes)
}
