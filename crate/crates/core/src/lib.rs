//! Multi-coil Cartesian MRI reconstruction.
//!
//! The crate covers the whole pipeline for a periodically under-sampled,
//! multi-coil acquisition:
//!
//! - [`kspace`]: centered orthonormal FFTs, line masks, coil maps and the
//!   forward operator `y_l = M F S_l x` with its adjoint, plus a synthetic
//!   phantom generator.
//! - [`sense`]: sensitivity map estimation from the fully-sampled centre of
//!   k-space.
//! - [`wavelets`]: orthonormal periodic 2D DWT (Haar, Daubechies-2) and
//!   complex soft thresholding.
//! - [`pdhg`]: a Chambolle-Pock solver for wavelet-L1 regularised SENSE.
//! - [`autodiff`]: a small reverse-mode engine over dense real tensors.
//! - [`networks`]: MWCNN image corrector, U-net map refiner and the XPDNet
//!   unrolled reconstruction network.
//! - [`metrics`]: PSNR, SSIM, MS-SSIM and the compound training loss.
//! - [`optim`] and [`train`]: RAdam and the training loop.
//! - [`io`]: the on-disk formats (KSP1, MSK1, SMP1, CKPT1, PGM, CSV).
//! - [`diagnostics`]: finite-difference gradient suites.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod pdhg;
pub mod sense;
pub mod train;
pub mod wavelets;

pub use error::{Error, Result};
pub use num_complex::Complex64;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub struct ReadmeDoctests;
