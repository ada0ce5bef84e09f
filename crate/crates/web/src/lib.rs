//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`.

use mrirecon::kspace::{
    fft2c, make_coil_maps, make_mask, make_phantom_with_phase, CoilKSpace, ComplexImage, ForwardOperator,
    SamplingMask, SensitivitySet,
};
use mrirecon::metrics::psnr;
use mrirecon::pdhg::{solve_cs, zero_filled_rss, PdhgConfig};
use mrirecon::sense::estimate_maps_lowfreq;
use wasm_bindgen::prelude::*;

fn js_err(e: mrirecon::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Grey ramp scaled so `peak` maps to white.
pub fn to_rgba(values: &[f64], peak: f64) -> Vec<u8> {
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    values
        .iter()
        .flat_map(|&v| {
            let g = (v * scale).clamp(0.0, 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn max(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0, f64::max)
}

/// A simulated acquisition of the phantom with adjustable sampling.
#[wasm_bindgen]
pub struct Scanner {
    size: usize,
    truth: Vec<f64>,
    image: ComplexImage,
    maps: SensitivitySet,
    mask: SamplingMask,
    kspace: CoilKSpace,
}

#[wasm_bindgen]
impl Scanner {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, coils: usize) -> Result<Scanner, JsError> {
        if size < 16 || coils == 0 {
            return Err(JsError::new("size must be at least 16 and coils at least 1"));
        }
        let image = make_phantom_with_phase(size, 0.5);
        let maps = make_coil_maps(size, coils);
        let mask = SamplingMask::full(size, size);
        let kspace = ForwardOperator::new(mask.clone(), maps.clone()).map_err(js_err)?.apply_forward(&image).map_err(js_err)?;
        Ok(Scanner { size, truth: image.magnitude(), image, maps, mask, kspace })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Re-acquires with every `accel`-th line plus `acs` centre lines.
    pub fn set_sampling(&mut self, accel: usize, acs: usize) -> Result<f64, JsError> {
        self.mask = make_mask(self.size, self.size, accel, acs.min(self.size), 0).map_err(js_err)?;
        let op = ForwardOperator::new(self.mask.clone(), self.maps.clone()).map_err(js_err)?;
        self.kspace = op.apply_forward(&self.image).map_err(js_err)?;
        Ok(self.mask.sampled_fraction())
    }

    /// Log-magnitude of the full k-space with unsampled lines dimmed.
    pub fn kspace_view(&self) -> Result<Vec<u8>, JsError> {
        let full = fft2c(&self.image).map_err(js_err)?;
        let logmag: Vec<f64> = full.data.iter().map(|z| (1.0 + 1e3 * z.norm()).ln()).collect();
        let keep = self.mask.expand();
        let dimmed: Vec<f64> = logmag.iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.15 * v }).collect();
        Ok(to_rgba(&dimmed, max(&logmag)))
    }

    pub fn truth_view(&self) -> Vec<u8> {
        to_rgba(&self.truth, 1.0)
    }

    pub fn zero_filled(&self) -> Result<Vec<u8>, JsError> {
        Ok(to_rgba(&self.zero_filled_magnitude()?, 1.0))
    }

    pub fn zero_filled_psnr(&self) -> Result<f64, JsError> {
        psnr(&self.zero_filled_magnitude()?, &self.truth, Some(1.0)).map_err(js_err)
    }

    /// Wavelet-regularized reconstruction; returns the image and stores its PSNR.
    pub fn pdhg(&self, lambda: f64, iters: usize) -> Result<Reconstruction, JsError> {
        let maps = estimate_maps_lowfreq(&self.kspace, &self.mask, true).map_err(js_err)?;
        let op = ForwardOperator::new(self.mask.clone(), maps).map_err(js_err)?;
        let cfg = PdhgConfig { lambda, n_iter: iters, ..PdhgConfig::default() };
        let mag = solve_cs(&self.kspace, &op, &cfg).map_err(js_err)?.image.magnitude();
        let psnr_db = psnr(&mag, &self.truth, Some(1.0)).map_err(js_err)?;
        Ok(Reconstruction { rgba: to_rgba(&mag, 1.0), psnr_db })
    }

    /// Magnitude of coil `coil`'s map as estimated from the centre lines.
    pub fn coil_map(&self, coil: usize) -> Result<Vec<u8>, JsError> {
        let maps = estimate_maps_lowfreq(&self.kspace, &self.mask, true).map_err(js_err)?;
        if coil >= maps.coils() {
            return Err(JsError::new("coil index out of range"));
        }
        let mag: Vec<f64> = maps.data().coil(coil).iter().map(|z| z.norm()).collect();
        Ok(to_rgba(&mag, 1.0))
    }

    fn zero_filled_magnitude(&self) -> Result<Vec<f64>, JsError> {
        zero_filled_rss(&self.kspace, &self.mask).map_err(js_err)
    }
}

#[wasm_bindgen]
pub struct Reconstruction {
    rgba: Vec<u8>,
    psnr_db: f64,
}

#[wasm_bindgen]
impl Reconstruction {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn psnr(&self) -> f64 {
        self.psnr_db
    }
}
