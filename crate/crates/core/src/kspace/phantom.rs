use std::f64::consts::PI;

use rand::Rng;

use super::ComplexImage;
use crate::Complex64;

/// Acquisition contrast label attached to a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Contrast {
    T1,
    T2,
    Flair,
    T1Post,
    Synthetic,
}

impl Contrast {
    pub const ALL_ANATOMICAL: [Contrast; 4] = [Contrast::T1, Contrast::T2, Contrast::Flair, Contrast::T1Post];

    pub fn tag(self) -> u8 {
        match self {
            Contrast::T1 => 0,
            Contrast::T2 => 1,
            Contrast::Flair => 2,
            Contrast::T1Post => 3,
            Contrast::Synthetic => 255,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Contrast::T1,
            1 => Contrast::T2,
            2 => Contrast::Flair,
            3 => Contrast::T1Post,
            255 => Contrast::Synthetic,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Contrast::T1 => "T1",
            Contrast::T2 => "T2",
            Contrast::Flair => "FLAIR",
            Contrast::T1Post => "T1POST",
            Contrast::Synthetic => "synthetic",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "T1" => Some(Contrast::T1),
            "T2" => Some(Contrast::T2),
            "FLAIR" => Some(Contrast::Flair),
            "T1POST" => Some(Contrast::T1Post),
            "SYNTHETIC" => Some(Contrast::Synthetic),
            _ => None,
        }
    }

    /// Additive intensities of the inner ellipses (the outer one is always 1).
    fn intensities(self) -> [f64; 10] {
        match self {
            Contrast::Synthetic => [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
            Contrast::T1 => [1.0, -0.7, -0.25, -0.25, 0.15, 0.2, 0.2, 0.1, 0.1, 0.1],
            Contrast::T2 => [1.0, -0.6, 0.3, 0.3, -0.1, 0.15, 0.15, 0.2, 0.2, 0.2],
            Contrast::Flair => [1.0, -0.75, -0.15, -0.15, 0.3, 0.05, 0.05, 0.25, 0.25, 0.25],
            Contrast::T1Post => [1.0, -0.7, -0.25, -0.25, 0.15, 0.45, 0.45, 0.3, 0.3, 0.3],
        }
    }
}

/// An ellipse in normalized `[-1, 1]^2` coordinates; `angle` in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub value: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub angle: f64,
}

const fn ellipse(value: f64, semi_x: f64, semi_y: f64, center_x: f64, center_y: f64, angle: f64) -> Ellipse {
    Ellipse { value, semi_x, semi_y, center_x, center_y, angle }
}

/// Modified (high-contrast) Shepp-Logan head.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    ellipse(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    ellipse(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    ellipse(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    ellipse(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    ellipse(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    ellipse(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    ellipse(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    ellipse(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn rasterize(n: usize, ellipses: &[Ellipse]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for e in ellipses {
        let (s, c) = (e.angle * PI / 180.0).sin_cos();
        for i in 0..n {
            let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64 - e.center_y;
            for j in 0..n {
                let x = (2.0 * j as f64 + 1.0) / n as f64 - 1.0 - e.center_x;
                let u = x * c + y * s;
                let v = -x * s + y * c;
                if (u / e.semi_x).powi(2) + (v / e.semi_y).powi(2) <= 1.0 {
                    out[i * n + j] += e.value;
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Deterministic real-valued Shepp-Logan phantom with magnitude in `[0, 1]`.
pub fn make_phantom(n: usize) -> ComplexImage {
    let values = rasterize(n, &SHEPP_LOGAN);
    ComplexImage::from_real(n, n, &values).expect("phantom buffer matches its shape")
}

/// Same phantom with a smooth low-order phase of peak `amplitude` radians.
pub fn make_phantom_with_phase(n: usize, amplitude: f64) -> ComplexImage {
    let mut img = make_phantom(n);
    for i in 0..n {
        let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        for j in 0..n {
            let x = (2.0 * j as f64 + 1.0) / n as f64 - 1.0;
            let phase = amplitude * (0.5 * x + 0.3 * y + 0.2 * x * y);
            let z = &mut img.data[i * n + j];
            *z = Complex64::from_polar(z.re, phase);
        }
    }
    img
}

/// A randomly perturbed head with contrast-specific ellipse intensities.
pub fn random_phantom<R: Rng + ?Sized>(n: usize, contrast: Contrast, rng: &mut R) -> ComplexImage {
    let values = contrast.intensities();
    let scale = rng.gen_range(0.85..1.0);
    let tilt: f64 = rng.gen_range(-8.0..8.0);
    let (ts, tc) = (tilt * PI / 180.0).sin_cos();
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .zip(values)
        .enumerate()
        .map(|(k, (e, value))| {
            let jitter = if k < 2 { 0.0 } else { 1.0 };
            let cx = e.center_x + jitter * rng.gen_range(-0.03..0.03);
            let cy = e.center_y + jitter * rng.gen_range(-0.03..0.03);
            Ellipse {
                value,
                semi_x: scale * e.semi_x * (1.0 + jitter * rng.gen_range(-0.1..0.1)),
                semi_y: scale * e.semi_y * (1.0 + jitter * rng.gen_range(-0.1..0.1)),
                center_x: scale * (cx * tc - cy * ts),
                center_y: scale * (cx * ts + cy * tc),
                angle: e.angle + tilt + jitter * rng.gen_range(-5.0..5.0),
            }
        })
        .collect();
    let values = rasterize(n, &ellipses);
    ComplexImage::from_real(n, n, &values).expect("phantom buffer matches its shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phantom_is_deterministic() {
        assert_eq!(make_phantom(64), make_phantom(64));
    }

    #[test]
    fn phantom_range_and_support() {
        let p = make_phantom(64);
        let mag = p.magnitude();
        assert!(mag.iter().all(|&m| (0.0..=1.0).contains(&m)));
        assert!(p.data.iter().all(|z| z.im == 0.0));
        let support = mag.iter().filter(|&&m| m > 0.0).count() as f64 / mag.len() as f64;
        assert!((0.2..0.9).contains(&support), "support fraction {support}");
    }

    #[test]
    fn phase_keeps_magnitude() {
        let plain = make_phantom(32);
        let phased = make_phantom_with_phase(32, 1.0);
        for (a, b) in plain.data.iter().zip(&phased.data) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        assert!(phased.data.iter().any(|z| z.im.abs() > 1e-3));
    }

    #[test]
    fn random_phantoms_vary_with_seed_and_stay_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let pa = random_phantom(32, Contrast::T2, &mut a);
        let pb = random_phantom(32, Contrast::T2, &mut b);
        assert_ne!(pa, pb);
        for p in [&pa, &pb] {
            assert!(p.magnitude().iter().all(|&m| (0.0..=1.0).contains(&m)));
        }
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(pa, random_phantom(32, Contrast::T2, &mut again));
    }

    #[test]
    fn contrast_tags_round_trip() {
        for c in [Contrast::T1, Contrast::T2, Contrast::Flair, Contrast::T1Post, Contrast::Synthetic] {
            assert_eq!(Contrast::from_tag(c.tag()), Some(c));
            assert_eq!(Contrast::parse(c.name()), Some(c));
        }
        assert_eq!(Contrast::from_tag(7), None);
    }
}
