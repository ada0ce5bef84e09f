//! The Cartesian multi-coil measurement model `y_l = M F S_l x`.
//!
//! Images and coil stacks are dense row-major `Complex64` buffers. `F` is the
//! centered orthonormal 2D DFT, `M` a phase-encode line mask and `S_l` the coil
//! sensitivities. With a full mask and normalized maps the operator is an
//! isometry, so `E^H E = I`.

mod coils;
mod fft;
mod mask;
mod operator;
mod phantom;

pub use coils::{make_coil_maps, make_coil_maps_rect, SensitivitySet, EPS_NORM};
pub(crate) use coils::normalize_in_place;
pub use fft::{fft2c, fft2c_inplace, ifft2c, ifft2c_inplace};
pub use mask::{default_acs, make_mask, SamplingMask};
pub use operator::{add_noise, rss, ForwardOperator};
pub use phantom::{
    make_phantom, make_phantom_with_phase, random_phantom, Contrast, Ellipse, SHEPP_LOGAN,
};

use crate::{Complex64, Error, Result};

/// A single complex image, `height` rows by `width` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image data has {} samples, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        inner(&self.data, &other.data)
    }
}

/// An `L x H x W` stack of complex arrays: coil k-space, coil images or maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilData {
    pub coils: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

pub type CoilKSpace = CoilData;
pub type CoilImages = CoilData;

impl CoilData {
    pub fn new(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 {
            return Err(Error::shape("coil stack needs at least one coil"));
        }
        if data.len() != coils * height * width {
            return Err(Error::shape(format!(
                "coil data has {} samples, expected {coils}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { coils, height, width, data })
    }

    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self { coils, height, width, data: vec![Complex64::new(0.0, 0.0); coils * height * width] }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn coil(&self, l: usize) -> &[Complex64] {
        let n = self.plane();
        &self.data[l * n..(l + 1) * n]
    }

    pub fn coil_mut(&mut self, l: usize) -> &mut [Complex64] {
        let n = self.plane();
        &mut self.data[l * n..(l + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn inner(&self, other: &CoilData) -> Complex64 {
        inner(&self.data, &other.data)
    }
}

pub(crate) fn norm(data: &[Complex64]) -> f64 {
    data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
