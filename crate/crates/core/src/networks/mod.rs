//! Learned reconstruction components.
//!
//! * [`Mwcnn`]: multi-level wavelet CNN used as the image corrector.
//! * [`Unet`]: small U-net refining coil sensitivities, coils as batch.
//! * [`Xpdnet`]: unrolled primal network with a buffer of iterates and a
//!   learned data-consistency step per iteration.
//!
//! Networks are parameter layouts over a [`ParamStore`]; their forward passes
//! record onto a [`Tape`](crate::autodiff::Tape) so the same code serves
//! inference and training.

mod mwcnn;
mod operator;
mod unet;
mod xpdnet;

pub use mwcnn::{mwcnn_forward, Mwcnn, MwcnnConfig};
pub use operator::GraphOperator;
pub use unet::{unet_refine_maps, Unet, UnetConfig};
pub use xpdnet::{xpdnet_forward, Xpdnet, XpdnetConfig};

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::Result;

/// 3x3 same-padded convolution with bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, out_ch: usize, in_ch: usize, rng: &mut R) -> Result<Self> {
        let (weight, bias) = store.add_conv(name, out_ch, in_ch, 3, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, out_ch: usize, in_ch: usize) -> Result<Self> {
        let (weight, bias) = store.add_conv_zero(name, out_ch, in_ch, 3)?;
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b))
    }

    pub fn apply_relu(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.apply(tape, store, x)?;
        Ok(tape.relu(y))
    }
}

fn relu_chain(convs: &[Conv], tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
    for c in convs {
        x = c.apply_relu(tape, store, x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests;
