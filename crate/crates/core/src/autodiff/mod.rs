//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! Tensors are row-major `f64` arrays, images use the NCHW layout, and
//! complex images travel as interleaved (real, imaginary) channel pairs:
//! complex channel `k` lives in real channels `2k` and `2k + 1`.
//!
//! ```
//! use mrirecon::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let s = tape.sum(sq);
//! let loss = tape.scale(s, 0.5);
//! let grads = tape.gradients(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, -2.0, 0.5]);
//! ```

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport, TensorCheck};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::kspace::{CoilData, ComplexImage};
use crate::{Complex64, Error, Result};

/// `[1, 2, H, W]` tensor from a complex image.
pub fn image_to_tensor(img: &ComplexImage) -> Tensor {
    let plane = img.len();
    let mut data = vec![0.0; 2 * plane];
    for (k, z) in img.data.iter().enumerate() {
        data[k] = z.re;
        data[plane + k] = z.im;
    }
    Tensor::new(vec![1, 2, img.height, img.width], data).expect("image tensor shape")
}

/// `[1, 2L, H, W]` tensor from a coil stack.
pub fn coils_to_tensor(coils: &CoilData) -> Tensor {
    let plane = coils.plane();
    let mut data = vec![0.0; 2 * coils.data.len()];
    for l in 0..coils.coils {
        for (k, z) in coils.coil(l).iter().enumerate() {
            data[2 * l * plane + k] = z.re;
            data[(2 * l + 1) * plane + k] = z.im;
        }
    }
    Tensor::new(vec![1, 2 * coils.coils, coils.height, coils.width], data).expect("coil tensor shape")
}

/// Complex image from channels `2k, 2k+1` of batch 0.
pub fn tensor_to_image(t: &Tensor, channel: usize) -> Result<ComplexImage> {
    let (_, c, h, w) = t.dims4()?;
    if 2 * channel + 1 >= c {
        return Err(Error::shape(format!("complex channel {channel} outside {c} real channels")));
    }
    let plane = h * w;
    let d = t.data();
    let data = (0..plane).map(|k| Complex64::new(d[2 * channel * plane + k], d[(2 * channel + 1) * plane + k])).collect();
    ComplexImage::new(h, w, data)
}

/// Coil stack from every channel pair of batch 0.
pub fn tensor_to_coils(t: &Tensor) -> Result<CoilData> {
    let (_, c, h, w) = t.dims4()?;
    if c % 2 != 0 {
        return Err(Error::shape(format!("{c} channels cannot hold (re, im) pairs")));
    }
    let plane = h * w;
    let d = t.data();
    let mut data = Vec::with_capacity(c / 2 * plane);
    for l in 0..c / 2 {
        data.extend((0..plane).map(|k| Complex64::new(d[2 * l * plane + k], d[(2 * l + 1) * plane + k])));
    }
    CoilData::new(c / 2, h, w, data)
}
