use rand::Rng;

use super::{relu_chain, Conv};
use crate::autodiff::{coils_to_tensor, tensor_to_coils, ParamStore, Tape, Var};
use crate::kspace::SensitivitySet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnetConfig {
    pub depth: usize,
    pub base_filters: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { depth: 3, base_filters: 8 }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 {
            return Err(Error::config("U-net depth and base filters must be positive"));
        }
        Ok(())
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Average-pool / upsample U-net with concatenated skips, run on each coil's
/// (re, im) pair with shared weights. Output is residual to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Unet {
    pub config: UnetConfig,
    encoder: Vec<[Conv; 2]>,
    bottleneck: [Conv; 2],
    decoder: Vec<[Conv; 2]>,
    output: Conv,
}

impl Unet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: &UnetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = |d: usize| config.base_filters << d;
        let mut pair = |store: &mut ParamStore, name: String, c_in: usize, c_out: usize| -> Result<[Conv; 2]> {
            Ok([Conv::new(store, &format!("{name}a"), c_out, c_in, rng)?, Conv::new(store, &format!("{name}b"), c_out, c_out, rng)?])
        };
        let mut encoder = Vec::with_capacity(config.depth);
        for d in 0..config.depth {
            let c_in = if d == 0 { 2 } else { width(d - 1) };
            encoder.push(pair(store, format!("{prefix}.enc{d}"), c_in, width(d))?);
        }
        let bottleneck = pair(store, format!("{prefix}.mid"), width(config.depth - 1), width(config.depth))?;
        let mut decoder = Vec::with_capacity(config.depth);
        for d in 0..config.depth {
            decoder.push(pair(store, format!("{prefix}.dec{d}"), width(d + 1) + width(d), width(d))?);
        }
        let output = Conv::zeroed(store, &format!("{prefix}.out"), 2, width(0))?;
        Ok(Self { config: *config, encoder, bottleneck, decoder, output })
    }

    /// Refines `[1, 2L, H, W]` maps and renormalizes them on `support`
    /// (`H * W` pixels).
    pub fn refine(&self, tape: &mut Tape, store: &ParamStore, maps: Var, support: &[bool]) -> Result<Var> {
        let (n, c2, h, w) = tape.value(maps).dims4()?;
        let m = self.config.size_multiple();
        if n != 1 || c2 % 2 != 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("U-net needs [1, 2L, H, W] with sizes divisible by {m}, got {:?}", tape.value(maps).shape())));
        }
        let per_coil = tape.reshape(maps, &[c2 / 2, 2, h, w])?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut z = per_coil;
        for block in &self.encoder {
            z = relu_chain(block, tape, store, z)?;
            skips.push(z);
            z = tape.avgpool2(z)?;
        }
        z = relu_chain(&self.bottleneck, tape, store, z)?;
        for (block, skip) in self.decoder.iter().zip(skips).rev() {
            let up = tape.upsample2(z)?;
            let joined = tape.concat(&[up, skip])?;
            z = relu_chain(block, tape, store, joined)?;
        }
        let delta = self.output.apply(tape, store, z)?;
        let refined = tape.add(per_coil, delta)?;
        let stacked = tape.reshape(refined, &[1, c2, h, w])?;
        tape.coil_normalize(stacked, support.to_vec())
    }
}

/// Pixels where any coil of `maps` is non-zero.
pub(crate) fn map_support(maps: &SensitivitySet) -> Vec<bool> {
    let data = maps.data();
    let plane = maps.height() * maps.width();
    (0..plane).map(|p| (0..maps.coils()).any(|l| data.coil(l)[p].norm_sqr() > 0.0)).collect()
}

/// Applies the refiner to a concrete set of maps.
pub fn unet_refine_maps(net: &Unet, store: &ParamStore, maps: &SensitivitySet) -> Result<SensitivitySet> {
    let mut tape = Tape::new();
    let v = tape.constant(coils_to_tensor(maps.data()));
    let out = net.refine(&mut tape, store, v, &map_support(maps))?;
    Ok(SensitivitySet::from_raw(tensor_to_coils(tape.value(out))?))
}
