//! Chambolle-Pock primal-dual solver for wavelet-L1 regularised SENSE:
//!
//! ```text
//! min_x  sum_l 1/2 ||y_l - M F S_l x||^2 + lambda ||psi x||_1
//! ```
//!
//! The stacked operator `K = (E; psi)` gets one dual variable per block. The
//! data-term conjugate has a closed-form prox; the L1 conjugate's prox is a
//! projection onto the `lambda` ball (Moreau identity of soft thresholding).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kspace::{ifft2c_inplace, rss, CoilData, CoilKSpace, ComplexImage, ForwardOperator, SamplingMask};
use crate::wavelets::{dwt2, idwt2, Wavelet, WaveletCoeffs};
use crate::{Complex64, Error, Result};

/// Power iterations used when the solver sizes its own steps.
pub const NORM_ITERS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct PdhgConfig {
    pub lambda: f64,
    pub n_iter: usize,
    /// Primal step; `None` means `0.9 / ||K||`.
    pub tau: Option<f64>,
    /// Dual step; `None` means `0.9 / ||K||`.
    pub sigma: Option<f64>,
    pub theta: f64,
    pub wavelet: Wavelet,
    pub levels: usize,
    pub threshold_ll: bool,
}

impl Default for PdhgConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            n_iter: 200,
            tau: None,
            sigma: None,
            theta: 1.0,
            wavelet: Wavelet::Db2,
            levels: 3,
            threshold_ll: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub data_fidelity: f64,
    pub l1_term: f64,
}

#[derive(Clone, Debug)]
pub struct PdhgResult {
    pub image: ComplexImage,
    /// Entry 0 is the starting point, entry `k` the iterate after `k` updates.
    pub trace: Vec<TraceEntry>,
    pub tau: f64,
    pub sigma: f64,
}

impl PdhgResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective,data_fidelity,l1_term\n");
        for t in &self.trace {
            out.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", t.iteration, t.objective, t.data_fidelity, t.l1_term));
        }
        out
    }
}

/// Power-iteration estimate of `||E||` from a fixed pseudo-random start.
pub fn estimate_opnorm(op: &ForwardOperator, iters: usize) -> Result<f64> {
    if iters < 5 {
        return Err(Error::config(format!("power iteration needs at least 5 steps, got {iters}")));
    }
    let (h, w) = (op.height(), op.width());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = (0..h * w).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let mut v = ComplexImage::new(h, w, start)?;
    let n0 = v.norm();
    v.data.iter_mut().for_each(|z| *z /= n0);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let av = op.apply_normal(&v)?;
        let norm = av.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        estimate = norm.sqrt();
        v = av;
        v.data.iter_mut().for_each(|z| *z /= norm);
    }
    Ok(estimate)
}

/// `||K||` for `K = (E; psi)` with orthonormal `psi`, i.e. `sqrt(||E||^2 + 1)`.
pub fn stacked_norm(op: &ForwardOperator) -> Result<f64> {
    let e = estimate_opnorm(op, NORM_ITERS)?;
    Ok((e * e + 1.0).sqrt())
}

fn wavelet_forward(x: &ComplexImage, cfg: &PdhgConfig) -> Result<WaveletCoeffs<Complex64>> {
    dwt2(&x.data, x.height, x.width, cfg.levels, cfg.wavelet)
}

fn l1_norm(coeffs: &WaveletCoeffs<Complex64>, threshold_ll: bool) -> f64 {
    coeffs
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| threshold_ll || !coeffs.is_approximation(*i))
        .map(|(_, z)| z.norm())
        .sum()
}

fn terms(x: &ComplexImage, y: &CoilKSpace, op: &ForwardOperator, cfg: &PdhgConfig) -> Result<(f64, f64)> {
    let ex = op.apply_forward(x)?;
    let data = 0.5 * ex.data.iter().zip(&y.data).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>();
    let l1 = cfg.lambda * l1_norm(&wavelet_forward(x, cfg)?, cfg.threshold_ll);
    Ok((data, l1))
}

/// `sum_l 1/2 ||y_l - (E x)_l||^2 + lambda ||psi x||_1` (detail bands only unless `threshold_ll`).
pub fn objective(x: &ComplexImage, y: &CoilKSpace, op: &ForwardOperator, cfg: &PdhgConfig) -> Result<f64> {
    let (data, l1) = terms(x, y, op, cfg)?;
    Ok(data + l1)
}

/// Zero-filled coil-combined magnitude: RSS of `F^H M y_l`.
pub fn zero_filled(y: &CoilKSpace, op: &ForwardOperator) -> Result<Vec<f64>> {
    Ok(rss(&op.coil_images(y)?))
}

/// Zero-filled RSS magnitude from k-space and mask alone.
pub fn zero_filled_rss(y: &CoilKSpace, mask: &SamplingMask) -> Result<Vec<f64>> {
    if y.height != mask.height || y.width != mask.width {
        return Err(Error::shape(format!("k-space is {}x{} but mask is {}x{}", y.height, y.width, mask.height, mask.width)));
    }
    let mut coils = y.clone();
    for l in 0..coils.coils {
        let plane = coils.coil_mut(l);
        mask.apply_plane(plane);
        ifft2c_inplace(plane, y.height, y.width);
    }
    Ok(rss(&coils))
}

fn validate(cfg: &PdhgConfig, tau: f64, sigma: f64, k_norm: f64) -> Result<()> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    if !(0.0..=1.0).contains(&cfg.theta) {
        return Err(Error::config(format!("theta must lie in [0, 1], got {}", cfg.theta)));
    }
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::config("step sizes must be positive"));
    }
    let product = tau * sigma * k_norm * k_norm;
    if product > 1.0 {
        return Err(Error::config(format!("tau * sigma * ||K||^2 = {product:.4} exceeds 1")));
    }
    Ok(())
}

/// Runs the solver from `E^H y`.
pub fn solve_cs(y: &CoilKSpace, op: &ForwardOperator, cfg: &PdhgConfig) -> Result<PdhgResult> {
    solve_cs_from(y, op, cfg, None)
}

/// Runs the solver from `x0` (or `E^H y`) with zero dual variables.
pub fn solve_cs_from(y: &CoilKSpace, op: &ForwardOperator, cfg: &PdhgConfig, x0: Option<&ComplexImage>) -> Result<PdhgResult> {
    let k_norm = stacked_norm(op)?;
    let tau = cfg.tau.unwrap_or(0.9 / k_norm);
    let sigma = cfg.sigma.unwrap_or(0.9 / k_norm);
    validate(cfg, tau, sigma, k_norm)?;

    let mut y = y.clone();
    op.mask.apply(&mut y)?;
    let mut x = match x0 {
        Some(x0) => x0.clone(),
        None => op.apply_adjoint(&y)?,
    };
    let mut x_bar = x.clone();
    let mut p = CoilData::zeros(y.coils, y.height, y.width);
    let mut q = WaveletCoeffs::zeros(cfg.wavelet, cfg.levels, x.height, x.width);

    let record = |iteration: usize, x: &ComplexImage| -> Result<TraceEntry> {
        let (data_fidelity, l1_term) = terms(x, &y, op, cfg)?;
        Ok(TraceEntry { iteration, objective: data_fidelity + l1_term, data_fidelity, l1_term })
    };
    let mut trace = vec![record(0, &x)?];

    for it in 1..=cfg.n_iter {
        // data dual: prox of sigma F*, F(z) = 1/2 ||z - y||^2
        let ex = op.apply_forward(&x_bar)?;
        for ((pi, e), yi) in p.data.iter_mut().zip(&ex.data).zip(&y.data) {
            *pi = (*pi + (e - yi) * sigma) / (1.0 + sigma);
        }
        // regulariser dual: projection onto the lambda ball
        let wx = wavelet_forward(&x_bar, cfg)?;
        for (idx, (qi, wi)) in q.data.iter_mut().zip(&wx.data).enumerate() {
            let v: Complex64 = *qi + *wi * sigma;
            *qi = if !cfg.threshold_ll && wx.is_approximation(idx) {
                Complex64::new(0.0, 0.0)
            } else {
                let m = v.norm();
                if m > cfg.lambda { v * (cfg.lambda / m) } else { v }
            };
        }

        let ehp = op.apply_adjoint(&p)?;
        let wtq = idwt2(&q)?;
        let x_prev = x.clone();
        for ((xi, a), b) in x.data.iter_mut().zip(&ehp.data).zip(&wtq) {
            *xi -= (a + b) * tau;
        }
        for ((xb, xi), xp) in x_bar.data.iter_mut().zip(&x.data).zip(&x_prev.data) {
            *xb = xi + (xi - xp) * cfg.theta;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("primal iterate diverged at iteration {it}")));
        }
        trace.push(record(it, &x)?);
    }
    Ok(PdhgResult { image: x, trace, tau, sigma })
}
