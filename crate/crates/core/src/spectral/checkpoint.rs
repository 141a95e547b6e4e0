//! Binary field checkpoints.
//!
//! Layout: magic `GSQG`, `u32` version (1), `u32` N, then `N*N` coefficients as
//! little-endian `f64` (re, im) pairs in storage order.

use super::{ScalarField, SpectralGrid};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{Read, Write};

pub const FIELD_MAGIC: &[u8; 4] = b"GSQG";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_field(mut w: impl Write, field: &ScalarField) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    write_header_tail(&mut w, field.grid().n())?;
    write_coefficients(&mut w, field.coefficients())
}

pub fn read_field(mut r: impl Read) -> Result<ScalarField> {
    expect_magic(&mut r, FIELD_MAGIC)?;
    let n = read_header_tail(&mut r)?;
    let grid = SpectralGrid::new(n)?;
    let coeffs = read_coefficients(&mut r, n * n)?;
    ScalarField::from_coefficients(&grid, coeffs)
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8]) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)?;
    if buf != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn write_header_tail(w: &mut impl Write, n: usize) -> Result<()> {
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_header_tail(r: &mut impl Read) -> Result<usize> {
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(read_u32(r)? as usize)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_coefficients(w: &mut impl Write, coeffs: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(coeffs.len() * 16);
    for c in coeffs {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_coefficients(r: &mut impl Read, count: usize) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; count * 16];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect())
}
