use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::fft::{fft2c_inplace, ifft2c_inplace};
use super::{CoilData, CoilKSpace, ComplexImage, SamplingMask, SensitivitySet};
use crate::{Complex64, Error, Result};

/// The multi-coil encoding operator `E x = (M F S_l x)_l`.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    pub mask: SamplingMask,
    pub maps: SensitivitySet,
}

impl ForwardOperator {
    pub fn new(mask: SamplingMask, maps: SensitivitySet) -> Result<Self> {
        let m = maps.data();
        if mask.height != m.height || mask.width != m.width {
            return Err(Error::shape(format!(
                "mask is {}x{} but maps are {}x{}",
                mask.height, mask.width, m.height, m.width
            )));
        }
        Ok(Self { mask, maps })
    }

    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        if x.height != self.height() || x.width != self.width() {
            return Err(Error::shape(format!(
                "image is {}x{} but operator is {}x{}",
                x.height,
                x.width,
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &CoilKSpace) -> Result<()> {
        if y.coils != self.coils() || y.height != self.height() || y.width != self.width() {
            return Err(Error::shape(format!(
                "k-space is {}x{}x{} but operator is {}x{}x{}",
                y.coils,
                y.height,
                y.width,
                self.coils(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    /// `y_l = M F (S_l x)`; unsampled entries are exactly zero.
    pub fn apply_forward(&self, x: &ComplexImage) -> Result<CoilKSpace> {
        self.check_image(x)?;
        let (h, w) = (self.height(), self.width());
        let maps = self.maps.data();
        let mut out = CoilData::zeros(self.coils(), h, w);
        out.data.par_chunks_mut(h * w).enumerate().for_each(|(l, plane)| {
            for ((o, s), xi) in plane.iter_mut().zip(maps.coil(l)).zip(&x.data) {
                *o = s * xi;
            }
            fft2c_inplace(plane, h, w);
            self.mask.apply_plane(plane);
        });
        Ok(out)
    }

    /// `sum_l conj(S_l) F^H (M y_l)`, accumulated in coil order.
    pub fn apply_adjoint(&self, y: &CoilKSpace) -> Result<ComplexImage> {
        self.check_kspace(y)?;
        let (h, w) = (self.height(), self.width());
        let maps = self.maps.data();
        let mut coil_images = y.clone();
        coil_images.data.par_chunks_mut(h * w).for_each(|plane| {
            self.mask.apply_plane(plane);
            ifft2c_inplace(plane, h, w);
        });
        let mut out = ComplexImage::zeros(h, w);
        for l in 0..self.coils() {
            for ((o, s), z) in out.data.iter_mut().zip(maps.coil(l)).zip(coil_images.coil(l)) {
                *o += s.conj() * z;
            }
        }
        Ok(out)
    }

    /// `E^H E x`.
    pub fn apply_normal(&self, x: &ComplexImage) -> Result<ComplexImage> {
        self.apply_adjoint(&self.apply_forward(x)?)
    }

    /// Per-coil images `F^H M y_l` without coil combination.
    pub fn coil_images(&self, y: &CoilKSpace) -> Result<CoilData> {
        self.check_kspace(y)?;
        let (h, w) = (self.height(), self.width());
        let mut out = y.clone();
        out.data.par_chunks_mut(h * w).for_each(|plane| {
            self.mask.apply_plane(plane);
            ifft2c_inplace(plane, h, w);
        });
        Ok(out)
    }
}

/// Adds complex white Gaussian noise with per-component deviation `sigma`
/// to the sampled entries; unsampled entries stay exactly zero.
pub fn add_noise(y: &mut CoilKSpace, mask: &SamplingMask, sigma: f64, seed: u64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = mask.expand();
    if keep.len() != y.plane() {
        return Err(Error::shape(format!("mask is {}x{} but k-space is {}x{}", mask.height, mask.width, y.height, y.width)));
    }
    for l in 0..y.coils {
        for (z, &k) in y.coil_mut(l).iter_mut().zip(&keep) {
            if k {
                *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    Ok(())
}

/// Root-sum-of-squares coil combination.
pub fn rss(coil_images: &CoilData) -> Vec<f64> {
    let n = coil_images.plane();
    let mut acc = vec![0.0; n];
    for l in 0..coil_images.coils {
        for (a, z) in acc.iter_mut().zip(coil_images.coil(l)) {
            *a += z.norm_sqr();
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}
