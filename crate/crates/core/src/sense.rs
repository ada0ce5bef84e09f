//! Sensitivity maps from the fully sampled centre of k-space.
//!
//! Each coil's k-space is cut down to the auto-calibration band, optionally
//! Hann-windowed across that band, transformed back to image space and
//! divided by the root-sum-of-squares image. The result is a smooth,
//! normalized starting point for the learned refiner.

use std::f64::consts::PI;

use crate::kspace::{ifft2c_inplace, normalize_in_place, CoilKSpace, SamplingMask, SensitivitySet};
use crate::{Complex64, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapEstimation {
    /// Hann window across the calibration band.
    pub apodize: bool,
    /// Rotate every coil so coil 0 is real and non-negative.
    pub anchor_phase: bool,
}

impl Default for MapEstimation {
    fn default() -> Self {
        Self { apodize: true, anchor_phase: false }
    }
}

/// Low-resolution map estimate from the ACS lines of `y`.
pub fn estimate_maps_lowfreq(y: &CoilKSpace, mask: &SamplingMask, apodize: bool) -> Result<SensitivitySet> {
    estimate_maps(y, mask, MapEstimation { apodize, ..MapEstimation::default() })
}

pub fn estimate_maps(y: &CoilKSpace, mask: &SamplingMask, opts: MapEstimation) -> Result<SensitivitySet> {
    if mask.acs_count < 2 {
        return Err(Error::InsufficientCalibration(format!(
            "need at least 2 auto-calibration lines, mask has {}",
            mask.acs_count
        )));
    }
    if y.height != mask.height || y.width != mask.width {
        return Err(Error::shape(format!(
            "k-space is {}x{} but mask is {}x{}",
            y.height, y.width, mask.height, mask.width
        )));
    }
    let (h, w) = (y.height, y.width);
    let (start, end) = mask.acs_range();
    let window: Vec<f64> = (0..end - start)
        .map(|k| if opts.apodize { hann(k, end - start) } else { 1.0 })
        .collect();

    let mut maps = CoilKSpace::zeros(y.coils, h, w);
    for l in 0..y.coils {
        let src = y.coil(l);
        let dst = maps.coil_mut(l);
        for (k, row) in (start..end).enumerate() {
            for j in 0..w {
                dst[row * w + j] = src[row * w + j] * window[k];
            }
        }
        ifft2c_inplace(dst, h, w);
    }
    normalize_in_place(&mut maps);

    if opts.anchor_phase {
        let reference: Vec<Complex64> = maps
            .coil(0)
            .iter()
            .map(|s| if s.norm() > 0.0 { s.conj() / s.norm() } else { Complex64::new(1.0, 0.0) })
            .collect();
        for l in 0..maps.coils {
            for (s, r) in maps.coil_mut(l).iter_mut().zip(&reference) {
                *s *= r;
            }
        }
    }
    Ok(SensitivitySet::from_raw(maps))
}

/// Symmetric Hann taper that stays positive at both band edges.
fn hann(k: usize, len: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * (k + 1) as f64 / (len + 1) as f64).cos()
}
