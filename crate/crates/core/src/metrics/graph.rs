//! Differentiable versions of the training loss, built on the tape.

use super::{feasible_scales, gaussian_taps, ms_ssim_weights, LossWeights, SsimParams, MS_SSIM_WEIGHTS};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Smoothing of the absolute value inside the graph L1 term. Keeps the
/// gradient defined at zero residual; the value is within this of the exact L1.
pub const L1_SMOOTHING: f64 = 1e-6;

/// Nodes of a compound loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub loss: Var,
    pub l1: Var,
    pub ms_ssim: Var,
}

/// Mean smoothed absolute difference.
pub fn l1_graph(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let abs = tape.charbonnier(diff, L1_SMOOTHING);
    Ok(tape.mean(abs))
}

fn window(params: &SsimParams) -> Tensor {
    let taps = gaussian_taps(params.window, params.sigma);
    let mut data = Vec::with_capacity(taps.len() * taps.len());
    for a in &taps {
        for b in &taps {
            data.push(a * b);
        }
    }
    Tensor::new(vec![taps.len(), taps.len()], data).expect("square window")
}

/// Mean SSIM and mean contrast-structure nodes at one scale.
fn components(tape: &mut Tape, x: Var, y: Var, win: &Tensor, c1: f64, c2: f64) -> Result<(Var, Var)> {
    let mx = tape.filter_valid(x, win)?;
    let my = tape.filter_valid(y, win)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let sxx = tape.filter_valid(xx, win)?;
    let syy = tape.filter_valid(yy, win)?;
    let sxy = tape.filter_valid(xy, win)?;

    let mx2 = tape.mul(mx, mx)?;
    let my2 = tape.mul(my, my)?;
    let mxy = tape.mul(mx, my)?;
    let vx = tape.sub(sxx, mx2)?;
    let vy = tape.sub(syy, my2)?;
    let cov = tape.sub(sxy, mxy)?;

    let lum_num = tape.scale(mxy, 2.0);
    let lum_num = tape.add_scalar(lum_num, c1);
    let lum_den = tape.add(mx2, my2)?;
    let lum_den = tape.add_scalar(lum_den, c1);
    let lum = tape.div(lum_num, lum_den)?;

    let cs_num = tape.scale(cov, 2.0);
    let cs_num = tape.add_scalar(cs_num, c2);
    let cs_den = tape.add(vx, vy)?;
    let cs_den = tape.add_scalar(cs_den, c2);
    let cs = tape.div(cs_num, cs_den)?;

    let ssim_map = tape.mul(lum, cs)?;
    Ok((tape.mean(ssim_map), tape.mean(cs)))
}

/// MS-SSIM of `[N, 1, H, W]` images, using as many of the five standard
/// scales as the image supports. Matches [`super::ms_ssim`] for `N = 1`.
pub fn ms_ssim_graph(tape: &mut Tape, pred: Var, target: Var, data_range: f64) -> Result<Var> {
    let params = SsimParams::default();
    let (_, _, h, w) = tape.value(pred).dims4()?;
    if tape.value(target).shape() != tape.value(pred).shape() {
        return Err(Error::shape("ms_ssim: prediction and target shapes differ"));
    }
    let scales = feasible_scales(h, w, MS_SSIM_WEIGHTS.len(), params.window);
    if scales == 0 {
        return Err(Error::shape(format!("{h}x{w} image is smaller than the SSIM window")));
    }
    let weights = ms_ssim_weights(scales);
    let win = window(&params);
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);

    let (mut x, mut y) = (pred, target);
    let mut value: Option<Var> = None;
    for (s, &weight) in weights.iter().enumerate() {
        let (ssim_mean, cs_mean) = components(tape, x, y, &win, c1, c2)?;
        if weights.len() == 1 {
            return Ok(ssim_mean);
        }
        let last = s + 1 == weights.len();
        let term = tape.pow_scalar(if last { ssim_mean } else { cs_mean }, weight);
        value = Some(match value {
            Some(v) => tape.mul(v, term)?,
            None => term,
        });
        if !last {
            let (_, _, ch, cw) = tape.value(x).dims4()?;
            if ch % 2 != 0 || cw % 2 != 0 {
                return Err(Error::shape(format!("MS-SSIM graph needs even sizes at every scale, got {ch}x{cw}")));
            }
            x = tape.avgpool2(x)?;
            y = tape.avgpool2(y)?;
        }
    }
    Ok(value.expect("at least one scale"))
}

/// `alpha * L1 + beta * (1 - MS-SSIM)` as a scalar node.
pub fn compound_loss_graph(tape: &mut Tape, pred: Var, target: Var, weights: &LossWeights) -> Result<LossTerms> {
    let l1 = l1_graph(tape, pred, target)?;
    let ms = ms_ssim_graph(tape, pred, target, weights.data_range)?;
    let a = tape.scale(l1, weights.alpha);
    let b = tape.scale(ms, -weights.beta);
    let b = tape.add_scalar(b, weights.beta);
    let loss = tape.add(a, b)?;
    Ok(LossTerms { loss, l1, ms_ssim: ms })
}
