//! On-disk formats. All binary fields are little-endian.
//!
//! | format | contents |
//! |--------|----------|
//! | KSP1   | multi-slice multi-coil k-space (also single images, as 1 coil x 1 slice) |
//! | MSK1   | line sampling mask |
//! | SMP1   | coil sensitivity maps |
//! | CKPT1  | network parameters, optimizer state and config, CRC32-protected |
//!
//! Images are exported as 16-bit binary PGM and metrics as CSV.

mod checkpoint;
mod volume;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, NamedTensor, CKPT_MAGIC, CKPT_VERSION};
pub use volume::{
    load_image, load_kspace, load_maps, load_mask, read_kspace, read_maps, read_mask, save_image, save_kspace, save_maps, save_mask, write_kspace,
    write_maps, write_mask, KspaceVolume, Precision, KSP_MAGIC, MSK_MAGIC, SMP_MAGIC,
};

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::metrics::psnr_capped;
use crate::{Error, Result};

/// Bounds-checked little-endian reader over an in-memory file.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8]) -> std::result::Result<(), FormatError> {
        let n = expected.len().min(self.remaining());
        let found = &self.buf[self.pos..self.pos + n];
        if found != expected {
            return Err(FormatError::BadMagic { expected: String::from_utf8_lossy(expected).into_owned(), found: found.to_vec() });
        }
        self.pos += n;
        Ok(())
    }

    pub fn u8(&mut self, what: &'static str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &'static str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, what: &'static str) -> std::result::Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self, what: &'static str) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A u32 size field that must be non-zero.
    pub fn dim(&mut self, what: &'static str) -> std::result::Result<usize, FormatError> {
        match self.u32(what)? {
            0 => Err(FormatError::Malformed(format!("{what} is zero"))),
            v => Ok(v as usize),
        }
    }

    pub fn finish(&self) -> std::result::Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::Malformed(format!("{n} trailing bytes"))),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Product of dimensions, rejecting sizes that overflow or exceed the payload.
pub(crate) fn checked_count(dims: &[usize], bytes_each: usize, available: usize) -> std::result::Result<usize, FormatError> {
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| FormatError::Malformed("dimensions overflow".into()))?;
    match count.checked_mul(bytes_each) {
        Some(b) if b <= available => Ok(count),
        _ => Err(FormatError::Truncated("samples")),
    }
}

/// Binary 16-bit PGM of `magnitude`, scaled so the image maximum maps to 65535.
/// Samples are big-endian as the Netpbm format requires.
pub fn encode_pgm(magnitude: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if magnitude.len() != height * width || magnitude.is_empty() {
        return Err(Error::shape(format!("{} pixels for a {height}x{width} image", magnitude.len())));
    }
    if magnitude.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image contains non-finite pixels".into()));
    }
    let max = magnitude.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in magnitude {
        let q = (v.max(0.0) * scale).round().min(65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn save_pgm(path: impl AsRef<Path>, magnitude: &[f64], height: usize, width: usize) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(magnitude, height, width)?)
}

/// Decodes a 16-bit binary PGM into `(pixels, height, width)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(Vec<u16>, usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Truncated("PGM header").into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(FormatError::BadMagic { expected: "P5".into(), found: fields[0].as_bytes().to_vec() }.into());
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| FormatError::Malformed(format!("PGM field {s:?}")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 65535 {
        return Err(FormatError::Malformed(format!("expected 16-bit PGM, maxval {maxval}")).into());
    }
    let body = &bytes[pos + 1..];
    if body.len() < 2 * width * height {
        return Err(FormatError::Truncated("PGM pixels").into());
    }
    let pixels = body.chunks_exact(2).take(width * height).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((pixels, height, width))
}

/// One line of a metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub volume_id: String,
    pub slice: usize,
    pub method: String,
    pub accel: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["volume_id", "slice", "method", "accel", "psnr_db", "ssim", "ms_ssim"];

/// Writes rows with infinite PSNR capped at [`crate::metrics::PSNR_CAP_DB`].
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.volume_id.clone(),
            r.slice.to_string(),
            r.method.clone(),
            r.accel.to_string(),
            format!("{:.6}", psnr_capped(r.psnr_db)),
            format!("{:.8}", r.ssim),
            format!("{:.8}", r.ms_ssim),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(FormatError::Malformed(format!("unexpected metrics header {header:?}")).into());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| FormatError::Malformed(format!("bad number {:?}", &rec[i])));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| FormatError::Malformed(format!("bad integer {:?}", &rec[i])));
        rows.push(MetricsRow {
            volume_id: rec[0].to_string(),
            slice: int(1)?,
            method: rec[2].to_string(),
            accel: int(3)?,
            psnr_db: num(4)?,
            ssim: num(5)?,
            ms_ssim: num(6)?,
        });
    }
    Ok(rows)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => FormatError::Malformed(format!("{other:?}")).into(),
    }
}

/// fastMRI HDF5 ingestion is not built in. A converter would map:
///
/// * `kspace` dataset `[slices, coils, H, W]` complex64 to a KSP1 volume with
///   dtype tag 0, slices and coils in the same order;
/// * the `acquisition` attribute (`AXT1`, `AXT2`, `AXFLAIR`, `AXT1POST`) to
///   the contrast tag;
/// * `reconstruction_rss` to per-slice magnitude targets (PGM or KSP1 with
///   one coil).
///
/// Always returns an error.
pub fn convert_fastmri_h5(path: impl AsRef<Path>) -> Result<KspaceVolume> {
    Err(Error::input(format!("HDF5 input is not supported ({}); convert to KSP1 first", path.as_ref().display())))
}

#[cfg(test)]
mod tests;
