use std::path::Path;

use super::{checked_count, read_file, write_file, Cursor};
use crate::error::FormatError;
use crate::kspace::{CoilData, ComplexImage, Contrast, SamplingMask, SensitivitySet};
use crate::{Complex64, Error, Result};

pub const KSP_MAGIC: &[u8; 4] = b"KSP1";
pub const MSK_MAGIC: &[u8; 4] = b"MSK1";
pub const SMP_MAGIC: &[u8; 4] = b"SMP1";

/// Sample storage type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Two f32 per sample (tag 0).
    Complex64,
    /// Two f64 per sample (tag 1).
    Complex128,
}

impl Precision {
    pub fn tag(self) -> u8 {
        match self {
            Precision::Complex64 => 0,
            Precision::Complex128 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> std::result::Result<Self, FormatError> {
        match tag {
            0 => Ok(Precision::Complex64),
            1 => Ok(Precision::Complex128),
            value => Err(FormatError::UnknownTag { field: "dtype", value }),
        }
    }

    fn bytes_per_sample(self) -> usize {
        match self {
            Precision::Complex64 => 8,
            Precision::Complex128 => 16,
        }
    }
}

/// Slices of multi-coil k-space sharing one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct KspaceVolume {
    pub contrast: Contrast,
    pub precision: Precision,
    pub slices: Vec<CoilData>,
}

impl KspaceVolume {
    pub fn new(contrast: Contrast, precision: Precision, slices: Vec<CoilData>) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::input("a volume needs at least one slice"))?;
        if slices.iter().any(|s| (s.coils, s.height, s.width) != (first.coils, first.height, first.width)) {
            return Err(Error::shape("slices of a volume must share coils, height and width"));
        }
        Ok(Self { contrast, precision, slices })
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        let s = &self.slices[0];
        (s.coils, s.height, s.width)
    }
}

fn put_samples(out: &mut Vec<u8>, data: &[Complex64], precision: Precision) {
    for z in data {
        match precision {
            Precision::Complex64 => {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
            Precision::Complex128 => {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
}

fn get_samples(cur: &mut Cursor, count: usize, precision: Precision) -> std::result::Result<Vec<Complex64>, FormatError> {
    (0..count)
        .map(|_| match precision {
            Precision::Complex64 => Ok(Complex64::new(cur.f32("samples")? as f64, cur.f32("samples")? as f64)),
            Precision::Complex128 => Ok(Complex64::new(cur.f64("samples")?, cur.f64("samples")?)),
        })
        .collect()
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::shape(format!("{what} {v} does not fit in u32")))
}

/// Encodes a volume. With [`Precision::Complex64`] samples are rounded to f32.
pub fn write_kspace(vol: &KspaceVolume) -> Result<Vec<u8>> {
    let (coils, height, width) = vol.geometry();
    let mut out = Vec::with_capacity(18 + vol.slices.len() * coils * height * width * vol.precision.bytes_per_sample());
    out.extend_from_slice(KSP_MAGIC);
    for (v, what) in [(coils, "coils"), (height, "height"), (width, "width"), (vol.slices.len(), "slices")] {
        out.extend_from_slice(&dim_u32(v, what)?.to_le_bytes());
    }
    out.push(vol.precision.tag());
    out.push(vol.contrast.tag());
    for s in &vol.slices {
        put_samples(&mut out, &s.data, vol.precision);
    }
    Ok(out)
}

pub fn read_kspace(bytes: &[u8]) -> Result<KspaceVolume> {
    let mut cur = Cursor::new(bytes);
    cur.magic(KSP_MAGIC)?;
    let coils = cur.dim("coils")?;
    let height = cur.dim("height")?;
    let width = cur.dim("width")?;
    let slices = cur.dim("slices")?;
    let precision = Precision::from_tag(cur.u8("dtype")?)?;
    let tag = cur.u8("contrast")?;
    let contrast = Contrast::from_tag(tag).ok_or(FormatError::UnknownTag { field: "contrast", value: tag })?;
    let per_slice = checked_count(&[coils, height, width], precision.bytes_per_sample(), cur.remaining())?;
    checked_count(&[per_slice, slices], precision.bytes_per_sample(), cur.remaining())?;
    let mut out = Vec::with_capacity(slices);
    for _ in 0..slices {
        out.push(CoilData::new(coils, height, width, get_samples(&mut cur, per_slice, precision)?)?);
    }
    cur.finish()?;
    KspaceVolume::new(contrast, precision, out)
}

pub fn save_kspace(path: impl AsRef<Path>, vol: &KspaceVolume) -> Result<()> {
    write_file(path.as_ref(), &write_kspace(vol)?)
}

pub fn load_kspace(path: impl AsRef<Path>) -> Result<KspaceVolume> {
    read_kspace(&read_file(path.as_ref())?)
}

/// Stores an image as a one-coil, one-slice KSP1 file in double precision.
pub fn save_image(path: impl AsRef<Path>, img: &ComplexImage, contrast: Contrast) -> Result<()> {
    let coil = CoilData::new(1, img.height, img.width, img.data.clone())?;
    save_kspace(path, &KspaceVolume::new(contrast, Precision::Complex128, vec![coil])?)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<(ComplexImage, Contrast)> {
    let vol = load_kspace(path)?;
    let (coils, height, width) = vol.geometry();
    if coils != 1 || vol.slices.len() != 1 {
        return Err(Error::input(format!("expected a single image, found {} slices of {coils} coils", vol.slices.len())));
    }
    let data = vol.slices.into_iter().next().expect("one slice").data;
    Ok((ComplexImage::new(height, width, data)?, vol.contrast))
}

pub fn write_mask(mask: &SamplingMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + mask.height);
    out.extend_from_slice(MSK_MAGIC);
    for (v, what) in [(mask.height, "height"), (mask.width, "width"), (mask.acs_count, "acs"), (mask.acceleration, "acceleration")] {
        out.extend_from_slice(&dim_u32(v, what)?.to_le_bytes());
    }
    out.extend(mask.line_selected.iter().map(|&s| s as u8));
    Ok(out)
}

pub fn read_mask(bytes: &[u8]) -> Result<SamplingMask> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MSK_MAGIC)?;
    let height = cur.dim("height")?;
    let width = cur.dim("width")?;
    let acs = cur.u32("acs")? as usize;
    let accel = cur.u32("acceleration")? as usize;
    let flags = cur.take(height, "line flags")?;
    let lines = flags
        .iter()
        .map(|&f| match f {
            0 => Ok(false),
            1 => Ok(true),
            value => Err(FormatError::UnknownTag { field: "line flag", value }),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    cur.finish()?;
    SamplingMask::from_lines(width, lines, acs, accel).map_err(|e| FormatError::Malformed(e.to_string()).into())
}

pub fn save_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    write_file(path.as_ref(), &write_mask(mask)?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    read_mask(&read_file(path.as_ref())?)
}

pub fn write_maps(maps: &SensitivitySet, precision: Precision) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(SMP_MAGIC);
    for (v, what) in [(maps.coils(), "coils"), (maps.height(), "height"), (maps.width(), "width")] {
        out.extend_from_slice(&dim_u32(v, what)?.to_le_bytes());
    }
    out.push(precision.tag());
    put_samples(&mut out, &maps.data().data, precision);
    Ok(out)
}

/// Reads maps as stored; no renormalization is applied.
pub fn read_maps(bytes: &[u8]) -> Result<SensitivitySet> {
    let mut cur = Cursor::new(bytes);
    cur.magic(SMP_MAGIC)?;
    let coils = cur.dim("coils")?;
    let height = cur.dim("height")?;
    let width = cur.dim("width")?;
    let precision = Precision::from_tag(cur.u8("dtype")?)?;
    let count = checked_count(&[coils, height, width], precision.bytes_per_sample(), cur.remaining())?;
    let data = get_samples(&mut cur, count, precision)?;
    cur.finish()?;
    SensitivitySet::new(coils, height, width, data)
}

pub fn save_maps(path: impl AsRef<Path>, maps: &SensitivitySet) -> Result<()> {
    write_file(path.as_ref(), &write_maps(maps, Precision::Complex128)?)
}

pub fn load_maps(path: impl AsRef<Path>) -> Result<SensitivitySet> {
    read_maps(&read_file(path.as_ref())?)
}
