//! Binary checkpoint format.
//!
//! ```text
//! "CGAP2CKP" | version: u32
//! per parameter: name_len: u32 | name | rank: u32 | dims: u64 × rank | f32 × numel
//! ```
//! All integers and floats little-endian. Parameters appear in declaration
//! order and include buffers (batch-norm statistics, volume calibration).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cgap2_tensor::{ParamStore, Scalar};

use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CGAP2CKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Loads values into an existing store. Every stored parameter must appear
/// in the file, in order, with the same shape.
pub fn load_checkpoint<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let truncated = || fail("file is truncated".into());
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(fail("missing CGAP2CKP magic".into()));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let mut loaded = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        let name_len = c.u32().ok_or_else(truncated)? as usize;
        let name = c.take(name_len).ok_or_else(truncated)?;
        let name = std::str::from_utf8(name).map_err(|_| fail("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(fail(format!("expected parameter {:?}, found {name:?}", p.name)));
        }
        let rank = c.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u64().ok_or_else(truncated)? as usize);
        }
        if shape != p.value.shape() {
            return Err(fail(format!(
                "shape mismatch for {name}: file {shape:?}, model {:?}",
                p.value.shape()
            )));
        }
        let payload = c.take(p.value.numel() * 4).ok_or_else(truncated)?;
        loaded.push(
            payload
                .chunks_exact(4)
                .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect::<Vec<T>>(),
        );
    }
    if c.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    for (p, values) in store.iter_mut().zip(loaded) {
        p.value.data_mut().copy_from_slice(&values);
        p.momentum_buffer.iter_mut().for_each(|m| *m = T::zero());
    }
    Ok(())
}
