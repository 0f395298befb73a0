//! CSV dumps and the "CMAG" binary cache.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::GridFunction;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMAG";
pub const VERSION: u16 = 1;

pub fn write_csv(u: &GridFunction, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = u.domain.dim;
    let mut header = vec!["node".to_string()];
    for a in 0..dim {
        header.push(format!(
            "{}{}",
            if a % 2 == 0 { "x" } else { "y" },
            a / 2 + 1
        ));
    }
    header.push("value".into());
    w.write_record(&header)?;
    for (i, v) in u.values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let x = u.domain.coord(i);
        let mut rec = vec![i.to_string()];
        rec.extend(x[..dim].iter().map(|c| format!("{c:.12e}")));
        rec.push(format!("{v:.17e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub n: u16,
    pub resolution: u32,
    pub h: f64,
}

/// Magic, version u16, n u16, resolution u32, h f64, then every box node
/// value as little-endian f64 in row-major order (NaN outside the domain).
pub fn write_cache(u: &GridFunction, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(u.domain.n as u16).to_le_bytes())?;
    w.write_all(&(u.domain.res as u32).to_le_bytes())?;
    w.write_all(&u.domain.h.to_le_bytes())?;
    for v in &u.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput("not a CMAG cache".into()));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported cache version {version}"
        )));
    }
    r.read_exact(&mut b2)?;
    let n = u16::from_le_bytes(b2);
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let resolution = u32::from_le_bytes(b4);
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let count = (resolution as usize).pow(2 * n as u32);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok((CacheHeader { n, resolution, h }, values))
}
