//! Binary persistence for datasets and indexes. Both formats are versioned,
//! little-endian, and round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ann::dataset::Dataset;
use crate::ann::hnsw::HnswIndex;
use crate::error::{Result, SaxError};

const DATASET_MAGIC: &[u8; 4] = b"SAXV";
const INDEX_MAGIC: &[u8; 4] = b"SAXI";
const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

fn check_header(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let got = read_exact::<4>(r)?;
    if &got != magic {
        return Err(SaxError::format(format!("not a {what} file: bad magic")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(SaxError::format(format!(
            "unsupported {what} version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Writes a dataset: magic `SAXV`, version, dim (u32), count (u64), then
/// the vectors as row-major little-endian f32.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, ds.dim() as u32)?;
    write_u64(&mut w, ds.len() as u64)?;
    for v in ds.as_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
///
/// # Errors
///
/// Bad magic, wrong version, truncated or oversized bodies, and non-finite
/// values are format errors.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, DATASET_MAGIC, "dataset")?;
    let dim = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    if dim == 0 || count == 0 {
        return Err(SaxError::format("dataset header declares zero dim or count"));
    }
    let total = dim
        .checked_mul(count)
        .ok_or_else(|| SaxError::format("dataset header overflows"))?;
    let mut body = vec![0u8; total * 4];
    r.read_exact(&mut body)
        .map_err(|_| SaxError::format("dataset body shorter than header declares"))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(SaxError::format("dataset body longer than header declares"));
    }
    let mut data = Vec::with_capacity(total);
    for chunk in body.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Dataset::from_flat(dim, data).map_err(|e| SaxError::format(format!("dataset invalid: {e}")))
}

/// Writes an index: magic `SAXI`, version, build parameters, entry point,
/// node count, then per node the per-level adjacency lists.
pub fn write_index(path: &Path, index: &HnswIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, index.dim() as u32)?;
    write_u32(&mut w, index.m() as u32)?;
    write_u32(&mut w, index.ef_construction() as u32)?;
    write_u64(&mut w, index.build_seed())?;
    write_f64(&mut w, index.level_scale())?;
    write_u32(&mut w, index.entry_point())?;
    write_u64(&mut w, index.len() as u64)?;
    for node in index.links() {
        write_u32(&mut w, node.len() as u32)?;
        for level in node {
            write_u32(&mut w, level.len() as u32)?;
            for &nb in level {
                write_u32(&mut w, nb)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an index written by [`write_index`], revalidating its structure.
pub fn read_index(path: &Path) -> Result<HnswIndex> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, INDEX_MAGIC, "index")?;
    let dim = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let ef_construction = read_u32(&mut r)? as usize;
    let build_seed = read_u64(&mut r)?;
    let level_scale = read_f64(&mut r)?;
    let entry_point = read_u32(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    if count == 0 {
        return Err(SaxError::format("index header declares zero nodes"));
    }
    let mut links = Vec::with_capacity(count);
    for _ in 0..count {
        let layers = read_u32(&mut r)? as usize;
        if layers == 0 || layers > 64 {
            return Err(SaxError::format("index node has implausible layer count"));
        }
        let mut node = Vec::with_capacity(layers);
        for _ in 0..layers {
            let degree = read_u32(&mut r)? as usize;
            if degree > count {
                return Err(SaxError::format("index degree exceeds node count"));
            }
            let mut nbrs = Vec::with_capacity(degree);
            for _ in 0..degree {
                nbrs.push(read_u32(&mut r)?);
            }
            node.push(nbrs);
        }
        links.push(node);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(SaxError::format("index body longer than header declares"));
    }
    HnswIndex::from_parts(dim, m, ef_construction, build_seed, level_scale, entry_point, links)
        .map_err(|e| SaxError::format(format!("index invalid: {e}")))
}
