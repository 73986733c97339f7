//! Binary volume container and 16-bit PGM export.
//!
//! Volume file layout (all integers little-endian):
//!
//! ```text
//! 0..8    magic  b"RDIFFVOL"
//! 8..12   format version (u32) = 1
//! 12..16  reserved, zero
//! 16      dimensionality n (u8, 1..=3)
//! 17..    n × u64 shape
//! ..      product(shape) × f32 samples, row-major
//! ```
//!
//! Parameter bundles use the same header with magic `b"RDIFFPRM"`, followed
//! by a u32 block count and, per block, a u16 name length, the UTF-8 name and
//! one volume record (dimensionality, shape, samples).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const VOLUME_MAGIC: &[u8; 8] = b"RDIFFVOL";
pub const PARAMS_MAGIC: &[u8; 8] = b"RDIFFPRM";
pub const FORMAT_VERSION: u32 = 1;

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != magic {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn write_record<W: Write>(w: &mut W, vol: &ImageVolume) -> Result<()> {
    w.write_all(&[vol.shape().len() as u8])?;
    for &d in vol.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in vol.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_record<R: Read>(r: &mut R) -> Result<ImageVolume> {
    let mut ndim = [0u8; 1];
    r.read_exact(&mut ndim)?;
    let ndim = ndim[0] as usize;
    if !(1..=3).contains(&ndim) {
        return Err(Error::Format(format!("dimensionality {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let d = u64::from_le_bytes(b);
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d}")))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageVolume::new(shape, data)
}

pub fn write_volume<W: Write>(w: &mut W, vol: &ImageVolume) -> Result<()> {
    write_header(w, VOLUME_MAGIC)?;
    write_record(w, vol)
}

pub fn read_volume<R: Read>(r: &mut R) -> Result<ImageVolume> {
    read_header(r, VOLUME_MAGIC)?;
    read_record(r)
}

pub fn save_volume(path: impl AsRef<Path>, vol: &ImageVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<ImageVolume> {
    read_volume(&mut BufReader::new(File::open(path)?))
}

pub fn write_params<W: Write>(w: &mut W, blocks: &[(String, ImageVolume)]) -> Result<()> {
    write_header(w, PARAMS_MAGIC)?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for (name, vol) in blocks {
        let bytes = name.as_bytes();
        let len =
            u16::try_from(bytes.len()).map_err(|_| Error::Format("block name too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        write_record(w, vol)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Vec<(String, ImageVolume)>> {
    read_header(r, PARAMS_MAGIC)?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4);
    let mut blocks = Vec::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        blocks.push((name, read_record(r)?));
    }
    Ok(blocks)
}

/// Binary 16-bit PGM (P5, maxval 65535) of a 2D volume; values are clamped to
/// `[0, 1]` before scaling.
pub fn write_pgm16<W: Write>(w: &mut W, vol: &ImageVolume) -> Result<()> {
    let (h, wd) = vol.dims_2d()?;
    write!(w, "P5\n{wd} {h}\n65535\n")?;
    for &v in vol.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    Ok(())
}

pub fn save_pgm16(path: impl AsRef<Path>, vol: &ImageVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm16(&mut w, vol)?;
    w.flush()?;
    Ok(())
}
