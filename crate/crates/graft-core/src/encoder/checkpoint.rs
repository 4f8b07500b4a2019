//! Model checkpoint file format.
//!
//! Single file, little-endian throughout:
//!
//! ```text
//! offset  size          field
//! 0       8             magic "GRAFTCKP"
//! 8       4             format version (u32, currently 1)
//! 12      8             meta length M (u64)
//! 20      M             meta: UTF-8 JSON (config, vocabulary, anything
//!                       the caller wants reproduced at load time)
//! 20+M    4             tensor count T (u32)
//! then T records:
//!         4             name length L (u32)
//!         L             name, UTF-8
//!         8             rows (u64)
//!         8             cols (u64)
//!         rows*cols*8   values, f64 row-major
//! ```
//!
//! Readers must reject wrong magic or version and any truncation; a partial
//! checkpoint is worse than none.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"GRAFTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Guards against absurd lengths from corrupt headers before any
/// allocation happens.
const MAX_NAME_LEN: u32 = 4096;
const MAX_META_LEN: u64 = 1 << 30;
const MAX_TENSOR_ELEMENTS: u64 = 1 << 32;

pub fn save_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &[(String, &DenseMatrix)],
) -> Result<()> {
    let ctx = || format!("writing checkpoint {}", path.display());
    let file = std::fs::File::create(path).map_err(Error::io(ctx()))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(Error::io(ctx()))
    };

    write(&mut w, &CHECKPOINT_MAGIC)?;
    write(&mut w, &CHECKPOINT_VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta)?;
    write(&mut w, &(meta_bytes.len() as u64).to_le_bytes())?;
    write(&mut w, &meta_bytes)?;
    let count = u32::try_from(tensors.len()).map_err(|_| {
        Error::CheckpointFormat(format!("{} tensors exceed the u32 count field", tensors.len()))
    })?;
    write(&mut w, &count.to_le_bytes())?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > MAX_NAME_LEN as usize {
            return Err(Error::CheckpointFormat(format!(
                "tensor name of {} bytes exceeds the {MAX_NAME_LEN}-byte limit",
                name_bytes.len()
            )));
        }
        write(&mut w, &(name_bytes.len() as u32).to_le_bytes())?;
        write(&mut w, name_bytes)?;
        write(&mut w, &(tensor.rows() as u64).to_le_bytes())?;
        write(&mut w, &(tensor.cols() as u64).to_le_bytes())?;
        for v in tensor.data() {
            write(&mut w, &v.to_le_bytes())?;
        }
    }
    w.flush().map_err(Error::io(ctx()))
}

/// Loads meta and all tensors in file order. Names are returned as stored;
/// callers decide what a complete tensor set looks like.
pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<(String, DenseMatrix)>)> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let file = std::fs::File::open(path).map_err(Error::io(ctx()))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {:02x?}, not a checkpoint file",
            magic
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let meta_len = read_u64(&mut r, "meta length")?;
    if meta_len > MAX_META_LEN {
        return Err(Error::CheckpointFormat(format!(
            "meta length {meta_len} is implausibly large"
        )));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    read_exact(&mut r, &mut meta_bytes, "meta")?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;

    let count = read_u32(&mut r, "tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let name_len = read_u32(&mut r, "tensor name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::CheckpointFormat(format!(
                "tensor {idx} name length {name_len} is implausibly large"
            )));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        read_exact(&mut r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| {
            Error::CheckpointFormat(format!("tensor {idx} name is not UTF-8"))
        })?;
        let rows = read_u64(&mut r, "tensor rows")?;
        let cols = read_u64(&mut r, "tensor cols")?;
        let elements = rows.checked_mul(cols).filter(|&e| e <= MAX_TENSOR_ELEMENTS);
        let elements = elements.ok_or_else(|| {
            Error::CheckpointFormat(format!("tensor `{name}` claims {rows} x {cols} values"))
        })?;
        let mut data = vec![0.0; elements as usize];
        let mut buf = [0u8; 8];
        for v in &mut data {
            read_exact(&mut r, &mut buf, "tensor values")?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push((
            name,
            DenseMatrix::from_vec(rows as usize, cols as usize, data)?,
        ));
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::CheckpointFormat(
                "trailing bytes after the last tensor".to_string(),
            ))
        }
        Err(e) => return Err(Error::io(ctx())(e)),
    }
    Ok((meta, tensors))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CheckpointFormat(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}
