use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::unet::map_support;
use super::{GraphOperator, Mwcnn, MwcnnConfig, Unet, UnetConfig};
use crate::autodiff::{coils_to_tensor, tensor_to_image, ParamId, ParamStore, Tape, Tensor, Var};
use crate::kspace::{CoilKSpace, ComplexImage, SamplingMask, SensitivitySet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct XpdnetConfig {
    pub n_unrolled: usize,
    pub buffer_size: usize,
    pub refine_maps: bool,
    pub mwcnn: MwcnnConfig,
    pub unet: UnetConfig,
    /// Starting value of every data-consistency step.
    pub alpha_init: f64,
}

impl Default for XpdnetConfig {
    fn default() -> Self {
        Self { n_unrolled: 6, buffer_size: 5, refine_maps: true, mwcnn: MwcnnConfig::default(), unet: UnetConfig::default(), alpha_init: 0.5 }
    }
}

impl XpdnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_unrolled == 0 || self.buffer_size == 0 {
            return Err(Error::config("n_unrolled and buffer_size must be at least 1"));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::config("alpha_init must be finite"));
        }
        self.mwcnn.validate()?;
        if self.refine_maps {
            self.unet.validate()?;
        }
        Ok(())
    }

    pub fn size_multiple(&self) -> usize {
        let m = self.mwcnn.size_multiple();
        if self.refine_maps {
            m.max(self.unet.size_multiple())
        } else {
            m
        }
    }
}

/// Unrolled reconstruction network.
///
/// A buffer of `buffer_size` complex images starts as copies of `E^H y`.
/// Iteration `k` computes `r = alpha_k E^H (E B[0] - y)`, feeds
/// `concat(B, r)` to its own MWCNN and adds the result to the buffer. The
/// output is `B[0]`. No network acts on k-space.
#[derive(Clone, Debug, PartialEq)]
pub struct Xpdnet {
    pub config: XpdnetConfig,
    pub params: ParamStore,
    alphas: Vec<ParamId>,
    nets: Vec<Mwcnn>,
    refiner: Option<Unet>,
}

impl Xpdnet {
    /// Builds the network with weights drawn from `seed`.
    pub fn new(config: &XpdnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let refiner = if config.refine_maps { Some(Unet::new(&mut params, "refiner", &config.unet, &mut rng)?) } else { None };
        let channels = 2 * config.buffer_size;
        let mut alphas = Vec::with_capacity(config.n_unrolled);
        let mut nets = Vec::with_capacity(config.n_unrolled);
        for k in 0..config.n_unrolled {
            alphas.push(params.add(format!("iter{k}.alpha"), Tensor::scalar(config.alpha_init))?);
            nets.push(Mwcnn::new(&mut params, &format!("iter{k}.net"), &config.mwcnn, channels + 2, channels, &mut rng)?);
        }
        Ok(Self { config: config.clone(), params, alphas, nets, refiner })
    }

    pub fn alphas(&self) -> &[ParamId] {
        &self.alphas
    }

    pub fn image_nets(&self) -> &[Mwcnn] {
        &self.nets
    }

    pub fn refiner(&self) -> Option<&Unet> {
        self.refiner.as_ref()
    }

    fn check_shapes(&self, y: &CoilKSpace, mask: &SamplingMask, maps: &SensitivitySet) -> Result<()> {
        let (l, h, w) = (maps.coils(), maps.height(), maps.width());
        if y.coils != l || y.height != h || y.width != w || mask.height != h || mask.width != w {
            return Err(Error::shape(format!(
                "k-space {}x{}x{}, mask {}x{}, maps {l}x{h}x{w}",
                y.coils, y.height, y.width, mask.height, mask.width
            )));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("{h}x{w} is not divisible by {m}")));
        }
        Ok(())
    }

    /// Records the reconstruction; returns a `[1, 2, H, W]` node.
    pub fn forward(&self, tape: &mut Tape, y: &CoilKSpace, mask: &SamplingMask, maps: &SensitivitySet) -> Result<Var> {
        self.check_shapes(y, mask, maps)?;
        let store = &self.params;
        let mut s = tape.constant(coils_to_tensor(maps.data()));
        if let Some(unet) = &self.refiner {
            s = unet.refine(tape, store, s, &map_support(maps))?;
        }
        let op = GraphOperator::new(tape, mask, s)?;
        let y = tape.constant(coils_to_tensor(y));

        let x0 = op.adjoint(tape, y)?;
        let mut buffer = tape.concat(&vec![x0; self.config.buffer_size])?;
        for (alpha, net) in self.alphas.iter().zip(&self.nets) {
            let current = tape.slice_channels(buffer, 0, 2)?;
            let predicted = op.forward(tape, current)?;
            let residual = tape.sub(predicted, y)?;
            let back = op.adjoint(tape, residual)?;
            let a = tape.param(store, *alpha);
            let step = tape.scale_by(a, back)?;
            let input = tape.concat(&[buffer, step])?;
            let update = net.forward(tape, store, input)?;
            buffer = tape.add(buffer, update)?;
        }
        tape.slice_channels(buffer, 0, 2)
    }

    /// Inference without keeping the graph.
    pub fn reconstruct(&self, y: &CoilKSpace, mask: &SamplingMask, maps: &SensitivitySet) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, y, mask, maps)?;
        tensor_to_image(tape.value(out), 0)
    }
}

pub fn xpdnet_forward(y: &CoilKSpace, mask: &SamplingMask, maps: &SensitivitySet, net: &Xpdnet) -> Result<ComplexImage> {
    net.reconstruct(y, mask, maps)
}
