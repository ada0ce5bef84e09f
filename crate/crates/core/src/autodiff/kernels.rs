//! Raw loops behind the differentiable primitives.

use rayon::prelude::*;

use super::Tensor;
use crate::wavelets::{dwt2, idwt2, Wavelet, WaveletCoeffs};

/// Overlap of an output row range with a shifted input row: returns
/// `(out_start, out_end)` such that `out + shift` stays in `0..len`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let start = (-shift).max(0) as usize;
    let end = (len as isize - shift).clamp(0, len as isize) as usize;
    (start.min(end), end)
}

/// Same-padded stride-1 cross-correlation plus bias.
pub(crate) fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let (n, c_in, h, w) = input.dims4().expect("checked by caller");
    let (c_out, _, kh, kw) = weight.dims4().expect("checked by caller");
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; n * c_out * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, plane)| {
        let (b, o) = (plane_idx / c_out, plane_idx % c_out);
        if let Some(bias) = bias {
            plane.fill(bias.data()[o]);
        }
        for c in 0..c_in {
            let src = &x[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
            let kernel = &wt[(o * c_in + c) * kh * kw..(o * c_in + c + 1) * kh * kw];
            for ky in 0..kh {
                let dy = ky as isize - ph;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let wv = kernel[ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - pw;
                    let (x0, x1) = valid_range(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, c_out, h, w], out).expect("conv output shape")
}

pub(crate) fn conv2d_backward_input(grad_out: &Tensor, weight: &Tensor, input_shape: &[usize]) -> Tensor {
    let (n, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (c_out, _, kh, kw) = weight.dims4().expect("checked by caller");
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let g = grad_out.data();
    let wt = weight.data();
    let mut gin = vec![0.0; n * c_in * h * w];
    gin.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, plane)| {
        let (b, c) = (plane_idx / c_in, plane_idx % c_in);
        for o in 0..c_out {
            let go = &g[(b * c_out + o) * h * w..(b * c_out + o + 1) * h * w];
            let kernel = &wt[(o * c_in + c) * kh * kw..(o * c_in + c + 1) * kh * kw];
            for ky in 0..kh {
                // out[y] used in[y + dy]; so in[s] receives from out[s - dy]
                let dy = -(ky as isize - ph);
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let wv = kernel[ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dx = -(kx as isize - pw);
                    let (x0, x1) = valid_range(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &go[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(input_shape.to_vec(), gin).expect("conv input grad shape")
}

pub(crate) fn conv2d_backward_weight(grad_out: &Tensor, input: &Tensor, weight_shape: &[usize]) -> Tensor {
    let (n, c_in, h, w) = input.dims4().expect("checked by caller");
    let (c_out, kh, kw) = (weight_shape[0], weight_shape[2], weight_shape[3]);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let g = grad_out.data();
    let x = input.data();
    let mut gw = vec![0.0; c_out * c_in * kh * kw];
    gw.par_chunks_mut(c_in * kh * kw).enumerate().for_each(|(o, block)| {
        for c in 0..c_in {
            for ky in 0..kh {
                let dy = ky as isize - ph;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pw;
                    let (x0, x1) = valid_range(w, dx);
                    let mut acc = 0.0;
                    for b in 0..n {
                        let go = &g[(b * c_out + o) * h * w..(b * c_out + o + 1) * h * w];
                        let src = &x[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let a = &go[y * w + x0..y * w + x1];
                            let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            acc += a.iter().zip(s).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                    block[(c * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    Tensor::new(weight_shape.to_vec(), gw).expect("conv weight grad shape")
}

pub(crate) fn conv2d_backward_bias(grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = grad_out.dims4().expect("checked by caller");
    let g = grad_out.data();
    let mut gb = vec![0.0; c];
    for b in 0..n {
        for (o, acc) in gb.iter_mut().enumerate() {
            *acc += g[(b * c + o) * h * w..(b * c + o + 1) * h * w].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], gb).expect("bias grad shape")
}

pub(crate) fn avgpool2(input: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims4().expect("checked by caller");
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let s = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * ow + j] = 0.25 * s;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("pool shape")
}

/// Transpose of [`avgpool2`]: spreads a quarter of each value over its 2x2 block.
pub(crate) fn avgpool2_backward(grad_out: &Tensor) -> Tensor {
    let up = upsample2(grad_out);
    up.map(|v| 0.25 * v)
}

pub(crate) fn upsample2(input: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims4().expect("checked by caller");
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("upsample shape")
}

/// Transpose of [`upsample2`]: sums each 2x2 block.
pub(crate) fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    avgpool2(grad_out).map(|v| 4.0 * v)
}

/// Valid-mode 2D correlation of every plane with one `k x k` kernel.
pub(crate) fn filter_valid(input: &Tensor, kernel: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims4().expect("checked by caller");
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kh {
                    let row = &src[(i + ky) * w + j..(i + ky) * w + j + kw];
                    let krow = &k[ky * kw..(ky + 1) * kw];
                    acc += row.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                dst[i * ow + j] = acc;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("filter shape")
}

pub(crate) fn filter_valid_backward(grad_out: &Tensor, kernel: &Tensor, input_shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let g = grad_out.data();
    let k = kernel.data();
    let mut gin = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gin[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let gv = go[i * ow + j];
                for ky in 0..kh {
                    for kx in 0..kw {
                        dst[(i + ky) * w + j + kx] += gv * k[ky * kw + kx];
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gin).expect("filter grad shape")
}

/// One-level orthonormal Haar analysis per channel. Channel `c` becomes
/// channels `4c..4c+4` holding the LL, LH, HL and HH bands.
pub(crate) fn dwt_layer(input: &Tensor) -> Tensor {
    let (n, c, h, w) = input.dims4().expect("checked by caller");
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; n * 4 * c * oh * ow];
    out.par_chunks_mut(4 * oh * ow).enumerate().for_each(|(p, dst)| {
        let coeffs = dwt2(&x[p * h * w..(p + 1) * h * w], h, w, 1, Wavelet::Haar).expect("even plane");
        for (band, (r0, c0)) in [(0, 0), (0, ow), (oh, 0), (oh, ow)].into_iter().enumerate() {
            for i in 0..oh {
                let src = &coeffs.data[(r0 + i) * w + c0..(r0 + i) * w + c0 + ow];
                dst[band * oh * ow + i * ow..band * oh * ow + (i + 1) * ow].copy_from_slice(src);
            }
        }
    });
    Tensor::new(vec![n, 4 * c, oh, ow], out).expect("dwt layer shape")
}

/// Inverse of [`dwt_layer`]; also its transpose.
pub(crate) fn idwt_layer(input: &Tensor) -> Tensor {
    let (n, c4, oh, ow) = input.dims4().expect("checked by caller");
    let (c, h, w) = (c4 / 4, 2 * oh, 2 * ow);
    let x = input.data();
    let mut out = vec![0.0; n * c * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(p, dst)| {
        let src = &x[p * 4 * oh * ow..(p + 1) * 4 * oh * ow];
        let mut coeffs = WaveletCoeffs::zeros(Wavelet::Haar, 1, h, w);
        for (band, (r0, c0)) in [(0, 0), (0, ow), (oh, 0), (oh, ow)].into_iter().enumerate() {
            for i in 0..oh {
                coeffs.data[(r0 + i) * w + c0..(r0 + i) * w + c0 + ow]
                    .copy_from_slice(&src[band * oh * ow + i * ow..band * oh * ow + (i + 1) * ow]);
            }
        }
        dst.copy_from_slice(&idwt2(&coeffs).expect("even plane"));
    });
    Tensor::new(vec![n, c, h, w], out).expect("idwt layer shape")
}
