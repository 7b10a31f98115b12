//! Flat-parameter checkpoint files.
//!
//! Layout on disk (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "GRLA"
//! version u32      currently 1
//! n       u32      number of layout entries
//! n x entry:
//!   name_len u32, name bytes (utf-8)
//!   ndim     u32, dims u32 x ndim
//!   offset   u64
//!   len      u64
//! values  f64le x total_len, in layout order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{Layout, LayoutEntry, ParamVector};
use super::NnError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GRLA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ParamVector) -> Result<(), NnError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let entries = params.layout().entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for d in &e.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&(e.offset as u64).to_le_bytes())?;
        w.write_all(&(e.len as u64).to_le_bytes())?;
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ParamVector, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NnError::BadCheckpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let n = read_u32(r)? as usize;
    if n > 1_000_000 {
        return Err(NnError::BadCheckpoint(format!("{n} layout entries")));
    }
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(NnError::BadCheckpoint("oversized entry name".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::BadCheckpoint("entry name is not utf-8".into()))?;
        let ndim = read_u32(r)? as usize;
        if ndim > 16 {
            return Err(NnError::BadCheckpoint("oversized entry rank".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let offset = read_u64(r)? as usize;
        let len = read_u64(r)? as usize;
        let entry = LayoutEntry::new(name, shape, offset);
        if entry.len != len {
            return Err(NnError::BadCheckpoint(format!(
                "entry {}: stored len {len} does not match shape",
                entry.name
            )));
        }
        entries.push(entry);
    }
    let layout = Layout::new(entries)?;
    let mut values = vec![0.0f64; layout.total_len()];
    let mut buf = [0u8; 8];
    for v in &mut values {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    ParamVector::new(layout, values)
}

pub fn save_checkpoint(path: &Path, params: &ParamVector) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::QNetwork;

    #[test]
    fn round_trip_is_bitwise() {
        let net = QNetwork::seeded(QNetwork::mlp_spec(3, &[4, 4], 2), 42).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, net.params()).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert!(back.bitwise_eq(net.params()));
    }

    #[test]
    fn header_starts_with_magic() {
        let net = QNetwork::zeros(QNetwork::mlp_spec(2, &[], 2)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, net.params()).unwrap();
        assert_eq!(&buf[0..4], b"GRLA");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = QNetwork::seeded(QNetwork::mlp_spec(2, &[3], 2), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, net.params()).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(NnError::BadCheckpoint(_))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_checkpoint(&mut &truncated[..]),
            Err(NnError::Io(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("distdqn-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.grla");
        let net = QNetwork::seeded(QNetwork::mlp_spec(4, &[8], 3), 7).unwrap();
        save_checkpoint(&path, net.params()).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.bitwise_eq(net.params()));
        std::fs::remove_file(&path).ok();
    }
}
