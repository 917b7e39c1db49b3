//! IDX image/label container format: big-endian magic, dimension sizes,
//! then raw unsigned bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn bad(path: &Path, msg: &str) -> Error {
    Error::Idx(format!("{}: {msg}", path.display()))
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| bad(path, "truncated header"))?;
    Ok(u32::from_be_bytes(buf))
}

pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    count: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(bad(path, "pixel buffer does not match the declared dimensions"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for dim in [count, rows, cols] {
        out.write_all(&(dim as u32).to_be_bytes())?;
    }
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)?;
    out.flush()?;
    Ok(())
}

/// Returns (pixels, count, rows, cols).
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32(&mut reader, path)?;
    if magic != IMAGE_MAGIC {
        return Err(bad(path, &format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(&mut reader, path)? as usize;
    let rows = read_u32(&mut reader, path)? as usize;
    let cols = read_u32(&mut reader, path)? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    reader.read_exact(&mut pixels).map_err(|_| bad(path, "truncated pixel data"))?;
    let mut extra = [0u8; 1];
    if reader.read(&mut extra)? != 0 {
        return Err(bad(path, "trailing bytes after pixel data"));
    }
    Ok((pixels, count, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32(&mut reader, path)?;
    if magic != LABEL_MAGIC {
        return Err(bad(path, &format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(&mut reader, path)? as usize;
    let mut labels = vec![0u8; count];
    reader.read_exact(&mut labels).map_err(|_| bad(path, "truncated label data"))?;
    let mut extra = [0u8; 1];
    if reader.read(&mut extra)? != 0 {
        return Err(bad(path, "trailing bytes after label data"));
    }
    Ok(labels)
}
