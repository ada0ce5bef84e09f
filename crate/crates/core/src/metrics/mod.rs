//! Image quality metrics on real (magnitude) images and the compound
//! L1 + MS-SSIM training loss.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) over the valid region, with
//! `C1 = (0.01 L)^2` and `C2 = (0.03 L)^2` for data range `L`. MS-SSIM
//! downsamples by 2x2 averaging between scales.

mod graph;

pub use graph::{compound_loss_graph, l1_graph, ms_ssim_graph, LossTerms};

use crate::{Error, Result};

/// Per-scale exponents of the standard five-scale MS-SSIM (Wang, Simoncelli
/// and Bovik, 2003).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Value written to CSV files in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

/// Weights of the compound loss `alpha * L1 + beta * (1 - MS-SSIM)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub data_range: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, data_range: 1.0 }
    }
}

fn check_pair(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<()> {
    if pred.len() != height * width || target.len() != height * width {
        return Err(Error::shape(format!(
            "images of {} and {} pixels for a {height}x{width} grid",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn l1_loss(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Peak signal-to-noise ratio in dB; `data_range` defaults to the target maximum.
/// Identical images give `+inf`.
pub fn psnr(pred: &[f64], target: &[f64], data_range: Option<f64>) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("psnr needs two non-empty images of equal size"));
    }
    let range = data_range.unwrap_or_else(|| target.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if !(range > 0.0) {
        return Err(Error::input(format!("data range must be positive, got {range}")));
    }
    let err = mse(pred, target);
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / err).log10())
}

/// `psnr` with infinity replaced by [`PSNR_CAP_DB`].
pub fn psnr_capped(value: f64) -> f64 {
    value.min(PSNR_CAP_DB)
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size).map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable valid-mode Gaussian filter.
fn blur(img: &[f64], height: usize, width: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut rows = vec![0.0; height * ow];
    for i in 0..height {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| taps[t] * img[i * width + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| taps[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_components(x: &[f64], y: &[f64], height: usize, width: usize, data_range: f64, params: &SsimParams) -> Result<(f64, f64)> {
    if height < params.window || width < params.window {
        return Err(Error::shape(format!("{height}x{width} image is smaller than the {0}x{0} window", params.window)));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = blur(x, height, width, &taps);
    let (my, _, _) = blur(y, height, width, &taps);
    let (sxx, _, _) = blur(&xx, height, width, &taps);
    let (syy, _, _) = blur(&yy, height, width, &taps);
    let (sxy, _, _) = blur(&xy, height, width, &taps);
    let n = mx.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for k in 0..mx.len() {
        let (ux, uy) = (mx[k], my[k]);
        let vx = sxx[k] - ux * ux;
        let vy = syy[k] - uy * uy;
        let cov = sxy[k] - ux * uy;
        let luminance = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        ssim_sum += luminance * cs;
        cs_sum += cs;
    }
    Ok((ssim_sum / n, cs_sum / n))
}

pub fn ssim(pred: &[f64], target: &[f64], height: usize, width: usize, data_range: f64) -> Result<f64> {
    ssim_with(pred, target, height, width, data_range, &SsimParams::default())
}

pub fn ssim_with(pred: &[f64], target: &[f64], height: usize, width: usize, data_range: f64, params: &SsimParams) -> Result<f64> {
    check_pair(pred, target, height, width)?;
    Ok(ssim_components(pred, target, height, width, data_range, params)?.0)
}

/// Number of dyadic scales an image supports with the given window.
pub fn feasible_scales(height: usize, width: usize, requested: usize, window: usize) -> usize {
    let mut scales = 0;
    let (mut h, mut w) = (height, width);
    while scales < requested && h >= window && w >= window {
        scales += 1;
        h /= 2;
        w /= 2;
    }
    scales
}

/// Weights for `scales` levels: the first `scales` standard weights, renormalized.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales.min(MS_SSIM_WEIGHTS.len())];
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn downsample(img: &[f64], height: usize, width: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let s = img[2 * i * width + 2 * j] + img[2 * i * width + 2 * j + 1] + img[(2 * i + 1) * width + 2 * j] + img[(2 * i + 1) * width + 2 * j + 1];
            out[i * ow + j] = 0.25 * s;
        }
    }
    (out, oh, ow)
}

/// Five-scale MS-SSIM, reduced to the scales the image supports.
pub fn ms_ssim(pred: &[f64], target: &[f64], height: usize, width: usize, data_range: f64) -> Result<f64> {
    let params = SsimParams::default();
    let scales = feasible_scales(height, width, MS_SSIM_WEIGHTS.len(), params.window);
    if scales == 0 {
        return Err(Error::shape(format!("{height}x{width} image is smaller than the SSIM window")));
    }
    ms_ssim_with(pred, target, height, width, data_range, &ms_ssim_weights(scales), &params)
}

/// MS-SSIM with explicit per-scale weights (one scale per weight).
///
/// Negative contrast-structure terms are clamped at zero before
/// exponentiation. A single scale reduces to plain SSIM.
pub fn ms_ssim_with(pred: &[f64], target: &[f64], height: usize, width: usize, data_range: f64, weights: &[f64], params: &SsimParams) -> Result<f64> {
    check_pair(pred, target, height, width)?;
    if weights.is_empty() {
        return Err(Error::config("MS-SSIM needs at least one scale"));
    }
    if weights.len() == 1 {
        return ssim_with(pred, target, height, width, data_range, params);
    }
    let (mut x, mut y) = (pred.to_vec(), target.to_vec());
    let (mut h, mut w) = (height, width);
    let mut value = 1.0;
    for (s, &weight) in weights.iter().enumerate() {
        let (ssim_mean, cs_mean) = ssim_components(&x, &y, h, w, data_range, params)?;
        let term = if s + 1 == weights.len() { ssim_mean } else { cs_mean };
        value *= term.max(0.0).powf(weight);
        if s + 1 < weights.len() {
            let (nx, nh, nw) = downsample(&x, h, w);
            let (ny, _, _) = downsample(&y, h, w);
            x = nx;
            y = ny;
            h = nh;
            w = nw;
        }
    }
    Ok(value)
}

/// `alpha * L1 + beta * (1 - MS-SSIM)`.
pub fn compound_loss(pred: &[f64], target: &[f64], height: usize, width: usize, weights: &LossWeights) -> Result<f64> {
    check_pair(pred, target, height, width)?;
    let l1 = l1_loss(pred, target);
    let ms = ms_ssim(pred, target, height, width, weights.data_range)?;
    Ok(weights.alpha * l1 + weights.beta * (1.0 - ms))
}

/// Metrics of one reconstructed slice against its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

/// PSNR, SSIM and MS-SSIM with the data range set to the target maximum.
pub fn evaluate_slice(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<SliceMetrics> {
    check_pair(pred, target, height, width)?;
    let range = target.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SliceMetrics {
        psnr_db: psnr(pred, target, Some(range))?,
        ssim: ssim(pred, target, height, width, range)?,
        ms_ssim: ms_ssim(pred, target, height, width, range)?,
    })
}
