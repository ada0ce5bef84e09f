use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{Fft, FftDirection, FftPlanner};

use super::ComplexImage;
use crate::{Complex64, Error, Result};

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("fft plan cache poisoned");
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
            FftPlanner::new().plan_fft(len, dir)
        })
        .clone()
}

/// Circularly shifts a row-major `h x w` array by (`dy`, `dx`).
fn roll(data: &mut [Complex64], h: usize, w: usize, dy: usize, dx: usize, scratch: &mut Vec<Complex64>) {
    if dy % h.max(1) == 0 && dx % w.max(1) == 0 {
        return;
    }
    scratch.clear();
    scratch.extend_from_slice(data);
    for i in 0..h {
        let ri = (i + dy) % h;
        for j in 0..w {
            data[ri * w + (j + dx) % w] = scratch[i * w + j];
        }
    }
}

fn transform(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w, "fft buffer does not match its shape");
    if h == 0 || w == 0 {
        return;
    }
    let mut scratch = Vec::with_capacity(h * w);
    // ifftshift
    roll(data, h, w, h - h / 2, w - w / 2, &mut scratch);

    let row_plan = plan(w, inverse);
    row_plan.process(data);

    let col_plan = plan(h, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = data[i * w + j];
        }
        col_plan.process(&mut column);
        for i in 0..h {
            data[i * w + j] = column[i];
        }
    }

    // fftshift
    roll(data, h, w, h / 2, w / 2, &mut scratch);

    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in data.iter_mut() {
        *z *= scale;
    }
}

/// Centered orthonormal forward DFT of a row-major `h x w` buffer, in place.
pub fn fft2c_inplace(data: &mut [Complex64], h: usize, w: usize) {
    transform(data, h, w, false);
}

/// Centered orthonormal inverse DFT, in place.
pub fn ifft2c_inplace(data: &mut [Complex64], h: usize, w: usize) {
    transform(data, h, w, true);
}

/// Centered orthonormal 2D DFT: DC lands on `(h/2, w/2)` and the 2-norm is preserved.
pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    if !img.is_finite() {
        return Err(Error::input("fft2c input contains non-finite samples"));
    }
    let mut out = img.clone();
    fft2c_inplace(&mut out.data, img.height, img.width);
    Ok(out)
}

/// Inverse of [`fft2c`], which is also its adjoint.
pub fn ifft2c(ksp: &ComplexImage) -> Result<ComplexImage> {
    if !ksp.is_finite() {
        return Err(Error::input("ifft2c input contains non-finite samples"));
    }
    let mut out = ksp.clone();
    ifft2c_inplace(&mut out.data, ksp.height, ksp.width);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        ComplexImage::new(h, w, data).unwrap()
    }

    #[test]
    fn constant_image_maps_to_center_bin() {
        let img = ComplexImage::from_real(4, 4, &[1.0; 16]).unwrap();
        let k = fft2c(&img).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let z = k.data[i * 4 + j];
                if (i, j) == (2, 2) {
                    assert!((z - Complex64::new(4.0, 0.0)).norm() < 1e-12);
                } else {
                    assert!(z.norm() < 1e-12, "bin ({i},{j}) = {z}");
                }
            }
        }
    }

    #[test]
    fn center_spike_inverts_to_constant() {
        let mut k = ComplexImage::zeros(8, 8);
        k.data[4 * 8 + 4] = Complex64::new(1.0, 0.0);
        let img = ifft2c(&k).unwrap();
        for z in &img.data {
            assert!((z - Complex64::new(0.125, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_and_norm() {
        let x = random_image(32, 32, 1);
        let back = ifft2c(&fft2c(&x).unwrap()).unwrap();
        for (a, b) in x.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-12);
        }
        let x = random_image(64, 64, 2);
        let k = fft2c(&x).unwrap();
        assert!((k.norm() - x.norm()).abs() < 1e-12 * x.norm().max(1.0));
    }

    #[test]
    fn odd_sizes_round_trip_and_center_dc() {
        let x = random_image(5, 7, 3);
        let back = ifft2c(&fft2c(&x).unwrap()).unwrap();
        for (a, b) in x.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-12);
        }
        let ones = ComplexImage::from_real(5, 7, &[1.0; 35]).unwrap();
        let k = fft2c(&ones).unwrap();
        assert!((k.data[2 * 7 + 3].re - 35f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let a = random_image(16, 16, 4);
        let b = random_image(16, 16, 5);
        let lhs = fft2c(&a).unwrap().inner(&b);
        let rhs = a.inner(&ifft2c(&b).unwrap());
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = ComplexImage::zeros(4, 4);
        x.data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(fft2c(&x), Err(Error::InvalidInput(_))));
        assert!(matches!(ifft2c(&x), Err(Error::InvalidInput(_))));
    }
}
