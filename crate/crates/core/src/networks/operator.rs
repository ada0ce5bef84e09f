use crate::autodiff::{Tape, Tensor, Var};
use crate::kspace::SamplingMask;
use crate::{Error, Result};

/// Forward operator `E x = M F (S_l x)` and its adjoint recorded on a tape.
///
/// Layouts: images `[1, 2, H, W]`, maps and k-space `[1, 2L, H, W]`.
/// The adjoint sums coils in order, reproducing
/// [`ForwardOperator::apply_adjoint`](crate::kspace::ForwardOperator::apply_adjoint)
/// bit for bit.
#[derive(Clone, Debug)]
pub struct GraphOperator {
    mask: Tensor,
    maps: Var,
}

impl GraphOperator {
    pub fn new(tape: &Tape, mask: &SamplingMask, maps: Var) -> Result<Self> {
        let (n, c2, h, w) = tape.value(maps).dims4()?;
        if n != 1 || c2 % 2 != 0 || h != mask.height || w != mask.width {
            return Err(Error::shape(format!("maps {:?} against a {}x{} mask", tape.value(maps).shape(), mask.height, mask.width)));
        }
        let plane = mask.expand_f64();
        let data = plane.iter().copied().cycle().take(c2 * h * w).collect();
        Ok(Self { mask: Tensor::new(vec![1, c2, h, w], data)?, maps })
    }

    pub fn maps(&self) -> Var {
        self.maps
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let coils = tape.cmul(self.maps, x)?;
        let k = tape.fft2c(coils)?;
        tape.mul_const(k, &self.mask)
    }

    pub fn adjoint(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let masked = tape.mul_const(y, &self.mask)?;
        let coils = tape.ifft2c(masked)?;
        let weighted = tape.cmul_conj(self.maps, coils)?;
        tape.coil_sum(weighted)
    }
}
