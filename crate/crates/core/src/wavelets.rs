//! Orthonormal periodic 2D discrete wavelet transforms.
//!
//! Coefficients are kept in the usual pyramid (Mallat) layout: after `levels`
//! decompositions the coarse approximation occupies the top-left
//! `height >> levels` by `width >> levels` block, and each level's three detail
//! bands fill the remaining quadrants of its parent block. With periodic
//! boundaries both families are exactly orthonormal, so `idwt2` is both the
//! inverse and the adjoint of `dwt2`.

use std::ops::{Add, Mul};

use crate::{Complex64, Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wavelet {
    Haar,
    /// Daubechies, two vanishing moments (4 taps).
    Db2,
}

impl Wavelet {
    pub fn lowpass(self) -> &'static [f64] {
        static HAAR: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
        static DB2: [f64; 4] = [
            0.48296291314453414,
            0.8365163037378079,
            0.22414386804201339,
            -0.12940952255126037,
        ];
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db2 => &DB2,
        }
    }

    fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n).map(|t| if t % 2 == 0 { h[n - 1 - t] } else { -h[n - 1 - t] }).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db2 => "db2",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Some(Wavelet::Haar),
            "db2" => Some(Wavelet::Db2),
            _ => None,
        }
    }
}

/// Scalar types the transforms run on.
pub trait Sample: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync {
    fn modulus(self) -> f64;
}

impl Sample for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Sample for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Detail orientation, named (vertical filter, horizontal filter).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subband {
    LL,
    /// Top-right quadrant: low-pass down the columns, high-pass along rows.
    LH,
    /// Bottom-left quadrant.
    HL,
    HH,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs<T> {
    pub family: Wavelet,
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Sample> WaveletCoeffs<T> {
    pub fn zeros(family: Wavelet, levels: usize, height: usize, width: usize) -> Self {
        Self { family, levels, height, width, data: vec![T::default(); height * width] }
    }

    /// Extent of the coarse approximation block.
    pub fn ll_shape(&self) -> (usize, usize) {
        (self.height >> self.levels, self.width >> self.levels)
    }

    pub fn is_approximation(&self, index: usize) -> bool {
        let (lh, lw) = self.ll_shape();
        let (i, j) = (index / self.width, index % self.width);
        i < lh && j < lw
    }

    /// Copies one band out. `level` runs from 1 (finest) to `levels`; the
    /// approximation band only exists at `level == levels`.
    pub fn subband(&self, level: usize, band: Subband) -> Result<Vec<T>> {
        if level == 0 || level > self.levels {
            return Err(Error::input(format!("level {level} outside 1..={}", self.levels)));
        }
        if band == Subband::LL && level != self.levels {
            return Err(Error::input("approximation band only exists at the coarsest level"));
        }
        let (bh, bw) = (self.height >> level, self.width >> level);
        let (r0, c0) = match band {
            Subband::LL => (0, 0),
            Subband::LH => (0, bw),
            Subband::HL => (bh, 0),
            Subband::HH => (bh, bw),
        };
        let mut out = Vec::with_capacity(bh * bw);
        for i in r0..r0 + bh {
            out.extend_from_slice(&self.data[i * self.width + c0..i * self.width + c0 + bw]);
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.modulus().powi(2)).sum::<f64>().sqrt()
    }
}

fn check_shape(height: usize, width: usize, levels: usize) -> Result<()> {
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || height == 0 || width == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::shape(format!(
            "{height}x{width} is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn analyze<T: Sample>(x: &[T], out: &mut [T], low: &[f64], high: &[f64]) {
    let n = x.len();
    let half = n / 2;
    for k in 0..half {
        let mut a = T::default();
        let mut d = T::default();
        for (t, (&hl, &hh)) in low.iter().zip(high).enumerate() {
            let v = x[(2 * k + t) % n];
            a = a + v * hl;
            d = d + v * hh;
        }
        out[k] = a;
        out[half + k] = d;
    }
}

fn synthesize<T: Sample>(c: &[T], out: &mut [T], low: &[f64], high: &[f64]) {
    let n = c.len();
    let half = n / 2;
    out.iter_mut().for_each(|v| *v = T::default());
    for k in 0..half {
        let (a, d) = (c[k], c[half + k]);
        for (t, (&hl, &hh)) in low.iter().zip(high).enumerate() {
            let idx = (2 * k + t) % n;
            out[idx] = out[idx] + a * hl + d * hh;
        }
    }
}

/// Applies one filter stage to every row (first `bw` columns of the first
/// `bh` rows), then to every column of that block.
fn level_forward<T: Sample>(data: &mut [T], width: usize, bh: usize, bw: usize, low: &[f64], high: &[f64]) {
    let mut line = vec![T::default(); bh.max(bw)];
    let mut out = vec![T::default(); bh.max(bw)];
    for i in 0..bh {
        let row = &mut data[i * width..i * width + bw];
        line[..bw].copy_from_slice(row);
        analyze(&line[..bw], &mut out[..bw], low, high);
        row.copy_from_slice(&out[..bw]);
    }
    for j in 0..bw {
        for i in 0..bh {
            line[i] = data[i * width + j];
        }
        analyze(&line[..bh], &mut out[..bh], low, high);
        for i in 0..bh {
            data[i * width + j] = out[i];
        }
    }
}

fn level_inverse<T: Sample>(data: &mut [T], width: usize, bh: usize, bw: usize, low: &[f64], high: &[f64]) {
    let mut line = vec![T::default(); bh.max(bw)];
    let mut out = vec![T::default(); bh.max(bw)];
    for j in 0..bw {
        for i in 0..bh {
            line[i] = data[i * width + j];
        }
        synthesize(&line[..bh], &mut out[..bh], low, high);
        for i in 0..bh {
            data[i * width + j] = out[i];
        }
    }
    for i in 0..bh {
        let row = &mut data[i * width..i * width + bw];
        line[..bw].copy_from_slice(row);
        synthesize(&line[..bw], &mut out[..bw], low, high);
        row.copy_from_slice(&out[..bw]);
    }
}

/// Forward transform of a row-major `height x width` array.
pub fn dwt2<T: Sample>(img: &[T], height: usize, width: usize, levels: usize, family: Wavelet) -> Result<WaveletCoeffs<T>> {
    check_shape(height, width, levels)?;
    if img.len() != height * width {
        return Err(Error::shape(format!("{} samples for a {height}x{width} image", img.len())));
    }
    let low = family.lowpass();
    let high = family.highpass();
    let mut data = img.to_vec();
    for level in 0..levels {
        level_forward(&mut data, width, height >> level, width >> level, low, &high);
    }
    Ok(WaveletCoeffs { family, levels, height, width, data })
}

/// Inverse (and adjoint) of [`dwt2`].
pub fn idwt2<T: Sample>(coeffs: &WaveletCoeffs<T>) -> Result<Vec<T>> {
    let (height, width, levels) = (coeffs.height, coeffs.width, coeffs.levels);
    check_shape(height, width, levels)?;
    if coeffs.data.len() != height * width {
        return Err(Error::shape("coefficient buffer does not match its shape"));
    }
    let low = coeffs.family.lowpass();
    let high = coeffs.family.highpass();
    let mut data = coeffs.data.clone();
    for level in (0..levels).rev() {
        level_inverse(&mut data, width, height >> level, width >> level, low, &high);
    }
    Ok(data)
}

/// Proximal map of `lambda * |.|` for a single (possibly complex) coefficient.
pub fn shrink<T: Sample>(z: T, lambda: f64) -> T {
    let m = z.modulus();
    if m <= lambda {
        T::default()
    } else {
        z * ((m - lambda) / m)
    }
}

/// Soft thresholding of the detail bands; the approximation passes through.
pub fn soft_threshold<T: Sample>(coeffs: &WaveletCoeffs<T>, lambda: f64) -> Result<WaveletCoeffs<T>> {
    soft_threshold_with(coeffs, lambda, false)
}

pub fn soft_threshold_with<T: Sample>(coeffs: &WaveletCoeffs<T>, lambda: f64, threshold_ll: bool) -> Result<WaveletCoeffs<T>> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("threshold must be non-negative, got {lambda}")));
    }
    let mut out = coeffs.clone();
    for (idx, z) in out.data.iter_mut().enumerate() {
        if threshold_ll || !coeffs.is_approximation(idx) {
            *z = shrink(*z, lambda);
        }
    }
    Ok(out)
}
