use std::f64::consts::PI;

use super::CoilData;
use crate::{Complex64, Result};

/// Relative RSS floor below which a pixel is treated as background.
pub const EPS_NORM: f64 = 1e-8;

/// Coil sensitivity maps `S_l`.
///
/// Maps built through [`SensitivitySet::normalized`] satisfy
/// `sum_l |S_l|^2 = 1` wherever the input RSS exceeds `EPS_NORM * max(RSS)`,
/// and are zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySet {
    maps: CoilData,
}

impl SensitivitySet {
    /// Wraps maps as-is without normalizing them.
    pub fn from_raw(maps: CoilData) -> Self {
        Self { maps }
    }

    pub fn normalized(mut maps: CoilData) -> Self {
        normalize_in_place(&mut maps);
        Self { maps }
    }

    pub fn new(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        Ok(Self { maps: CoilData::new(coils, height, width, data)? })
    }

    pub fn data(&self) -> &CoilData {
        &self.maps
    }

    pub fn into_data(self) -> CoilData {
        self.maps
    }

    pub fn coils(&self) -> usize {
        self.maps.coils
    }

    pub fn height(&self) -> usize {
        self.maps.height
    }

    pub fn width(&self) -> usize {
        self.maps.width
    }

    /// Per-pixel `sum_l |S_l|^2`.
    pub fn energy(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.maps.plane()];
        for l in 0..self.maps.coils {
            for (a, s) in acc.iter_mut().zip(self.maps.coil(l)) {
                *a += s.norm_sqr();
            }
        }
        acc
    }
}

/// Divides every coil by the RSS image and zeroes background. Returns the support.
pub(crate) fn normalize_in_place(maps: &mut CoilData) -> Vec<bool> {
    let n = maps.plane();
    let mut rss = vec![0.0; n];
    for l in 0..maps.coils {
        for (a, s) in rss.iter_mut().zip(maps.coil(l)) {
            *a += s.norm_sqr();
        }
    }
    rss.iter_mut().for_each(|r| *r = r.sqrt());
    let floor = EPS_NORM * rss.iter().cloned().fold(0.0, f64::max);
    let support: Vec<bool> = rss.iter().map(|&r| r > floor && r > 0.0).collect();
    for l in 0..maps.coils {
        for ((s, &r), &inside) in maps.coil_mut(l).iter_mut().zip(&rss).zip(&support) {
            *s = if inside { *s / r } else { Complex64::new(0.0, 0.0) };
        }
    }
    support
}

/// Smooth synthetic coil profiles placed on a ring around the field of view.
///
/// Each coil is a Gaussian bump centred just outside the image with a gentle
/// linear phase ramp; the set is normalized so `sum_l |S_l|^2 = 1` everywhere.
pub fn make_coil_maps(n: usize, coils: usize) -> SensitivitySet {
    make_coil_maps_rect(n, n, coils)
}

pub fn make_coil_maps_rect(height: usize, width: usize, coils: usize) -> SensitivitySet {
    let coils = coils.max(1);
    let mut maps = CoilData::zeros(coils, height, width);
    let width_sigma = 0.9;
    for l in 0..coils {
        let angle = 2.0 * PI * l as f64 / coils as f64;
        let (cy, cx) = (1.2 * angle.sin(), 1.2 * angle.cos());
        let plane = maps.coil_mut(l);
        for i in 0..height {
            let y = 1.0 - (2.0 * i as f64 + 1.0) / height as f64;
            for j in 0..width {
                let x = (2.0 * j as f64 + 1.0) / width as f64 - 1.0;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let magnitude = (-d2 / (2.0 * width_sigma * width_sigma)).exp();
                let phase = angle + 0.25 * PI * (x * angle.cos() + y * angle.sin());
                plane[i * width + j] = Complex64::from_polar(magnitude, phase);
            }
        }
    }
    normalize_in_place(&mut maps);
    SensitivitySet { maps }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Largest neighbour difference across all coils.
    fn max_gradient(maps: &SensitivitySet) -> f64 {
        let m = maps.data();
        let (h, w) = (m.height, m.width);
        let mut worst: f64 = 0.0;
        for l in 0..m.coils {
            let c = m.coil(l);
            for i in 0..h {
                for j in 0..w {
                    if i + 1 < h {
                        worst = worst.max((c[(i + 1) * w + j] - c[i * w + j]).norm());
                    }
                    if j + 1 < w {
                        worst = worst.max((c[i * w + j + 1] - c[i * w + j]).norm());
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn single_coil_has_unit_magnitude() {
        let maps = make_coil_maps(16, 1);
        for s in maps.data().coil(0) {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maps_are_normalized_everywhere() {
        for coils in [2, 4, 8] {
            let maps = make_coil_maps(32, coils);
            for e in maps.energy() {
                assert!((e - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn maps_are_smooth() {
        // regression bound for the 64x64, 4-coil generator (measured 0.02666)
        let g = max_gradient(&make_coil_maps(64, 4));
        assert!(g < 0.0267, "max neighbour difference {g}");
    }

    #[test]
    fn background_is_zeroed() {
        let mut raw = CoilData::zeros(2, 1, 3);
        raw.data = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let maps = SensitivitySet::normalized(raw);
        let e = maps.energy();
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert_eq!(e[1], 0.0);
        assert!((e[2] - 1.0).abs() < 1e-15);
    }
}
