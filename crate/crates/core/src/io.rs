//! Dense tensor and model files.
//!
//! A tensor file starts with one ASCII header line, `CPT1 N I_1 ... I_N`,
//! followed by the product of the extents as little-endian f64 values with
//! the first index running fastest. A model file is the factor matrices as
//! consecutive two-way tensor blocks (each I_n x R, so the values of one
//! block are column-major), ending at end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, KruskalModel};

const MAGIC: &str = "CPT1";
const MAX_HEADER_BYTES: usize = 4096;

/// Write one tensor block.
pub fn write_tensor<W: Write>(w: &mut W, x: &DenseTensor) -> Result<()> {
    let dims: Vec<String> = x.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{MAGIC} {} {}", x.ndim(), dims.join(" "))?;
    for v in x.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one tensor block; `Ok(None)` on clean end of input.
fn read_tensor_block<R: Read>(r: &mut R) -> Result<Option<DenseTensor>> {
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 => {
                if header.is_empty() {
                    return Ok(None);
                }
                return Err(Error::Format("file ends inside a header".into()));
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                header.push(byte[0]);
                if header.len() > MAX_HEADER_BYTES {
                    return Err(Error::Format("header line too long".into()));
                }
            }
        }
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(Error::Format(format!("bad magic in header '{header}'")));
    }
    let n: usize = tokens
        .next()
        .ok_or_else(|| Error::Format("header missing the order".into()))?
        .parse()
        .map_err(|_| Error::Format("order is not a number".into()))?;
    if n == 0 {
        return Err(Error::Format("order must be positive".into()));
    }
    let dims: Vec<usize> = tokens
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Format(format!("extent '{t}' is not a number")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != n {
        return Err(Error::Format(format!(
            "header promises {n} extents but carries {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Format("extents must be positive".into()));
    }
    let mut len = 1usize;
    for &d in &dims {
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::Format("extents overflow".into()))?;
    }
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("file ends before all values".into())
        } else {
            Error::Io(e)
        }
    })?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Some(DenseTensor::new(dims, values)?))
}

/// Read exactly one tensor; trailing bytes are rejected.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let x = read_tensor_block(r)?
        .ok_or_else(|| Error::Format("empty input".into()))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the values".into()));
    }
    Ok(x)
}

pub fn save_tensor<P: AsRef<Path>>(path: P, x: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<DenseTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

/// Write every factor as a two-way tensor block.
pub fn write_model<W: Write>(w: &mut W, model: &KruskalModel) -> Result<()> {
    for f in model.factors() {
        let dims = vec![f.nrows(), f.ncols()];
        // First index fastest means column-major values.
        let mut values = Vec::with_capacity(f.len());
        for c in 0..f.ncols() {
            for i in 0..f.nrows() {
                values.push(f[(i, c)]);
            }
        }
        write_tensor(w, &DenseTensor::new(dims, values)?)?;
    }
    Ok(())
}

/// Read factor blocks until end of input; every block must be two-way and
/// all blocks must agree on the column count.
pub fn read_model<R: Read>(r: &mut R) -> Result<KruskalModel> {
    let mut factors = Vec::new();
    while let Some(block) = read_tensor_block(r)? {
        if block.ndim() != 2 {
            return Err(Error::Format(format!(
                "factor block is {}-way, expected 2",
                block.ndim()
            )));
        }
        let (rows, cols) = (block.dims()[0], block.dims()[1]);
        let mut f = Array2::zeros((rows, cols));
        for (pos, &v) in block.values().iter().enumerate() {
            f[(pos % rows, pos / rows)] = v;
        }
        factors.push(f);
    }
    if factors.is_empty() {
        return Err(Error::Format("empty input".into()));
    }
    let r0 = factors[0].ncols();
    if factors.iter().any(|f| f.ncols() != r0) {
        return Err(Error::Format("factor blocks disagree on the rank".into()));
    }
    KruskalModel::new(factors)
}

pub fn save_model<P: AsRef<Path>>(path: P, model: &KruskalModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<KruskalModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}
