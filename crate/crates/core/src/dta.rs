//! `DTA1` tensor files.
//!
//! A single ASCII header line `DTA1 d N1 N2 ... Nd` terminated by `\n`,
//! followed by `N1 * ... * Nd` little-endian `f64` values in column-major
//! (first index fastest) order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::TensorD;

const MAGIC: &str = "DTA1";

pub fn write_dta<W: Write>(mut w: W, t: &TensorD) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(|n| n.to_string()).collect();
    writeln!(w, "{MAGIC} {} {}", t.ndim(), dims.join(" "))?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dta<R: BufRead>(mut r: R) -> Result<TensorD> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(MAGIC) {
        return Err(Error::Format("missing DTA1 magic".into()));
    }
    let d: usize = parse(fields.next())?;
    let shape = (0..d).map(|_| parse(fields.next())).collect::<Result<Vec<usize>>>()?;
    if fields.next().is_some() {
        return Err(Error::Format("trailing header fields".into()));
    }
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("expected {len} values")))?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after data".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TensorD::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, t: &TensorD) -> Result<()> {
    write_dta(BufWriter::new(File::create(path)?), t)
}

pub fn load(path: impl AsRef<Path>) -> Result<TensorD> {
    read_dta(BufReader::new(File::open(path)?))
}

fn parse(field: Option<&str>) -> Result<usize> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad header".into()))
}
