use rand::Rng;

use super::{relu_chain, Conv};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MwcnnConfig {
    pub scales: usize,
    pub filters: Vec<usize>,
    pub blocks: usize,
}

impl Default for MwcnnConfig {
    fn default() -> Self {
        Self { scales: 3, filters: vec![32, 64, 128], blocks: 2 }
    }
}

impl MwcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.blocks == 0 {
            return Err(Error::config("MWCNN needs at least one scale and one conv block"));
        }
        if self.filters.len() != self.scales || self.filters.contains(&0) {
            return Err(Error::config(format!("MWCNN filters {:?} do not match {} scales", self.filters, self.scales)));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.scales
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Level {
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
    /// Projects decoder features to the four subbands of the level above.
    expand: Conv,
}

/// Wavelet encoder-decoder: each scale halves the resolution with a Haar
/// DWT (four subbands stacked as channels) and the decoder undoes it with the
/// inverse transform, adding the encoder features of the same scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Mwcnn {
    pub config: MwcnnConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    head: Vec<Conv>,
    tail: Vec<Conv>,
    levels: Vec<Level>,
    output: Conv,
}

impl Mwcnn {
    /// Registers the weights under `prefix`. The output convolution starts at zero.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: &MwcnnConfig, in_channels: usize, out_channels: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = &config.filters;
        let chain = |store: &mut ParamStore, rng: &mut R, name: &str, c_in: usize, c_out: usize| -> Result<Vec<Conv>> {
            (0..config.blocks)
                .map(|b| Conv::new(store, &format!("{prefix}.{name}{b}"), c_out, if b == 0 { c_in } else { c_out }, rng))
                .collect()
        };
        let head = chain(store, rng, "head", in_channels, f[0])?;
        let mut levels = Vec::with_capacity(config.scales);
        for i in 1..=config.scales {
            // level i works at 1/2^i of the input size
            let width = f[(i).min(config.scales - 1)];
            let below = f[i - 1];
            let encoder = chain(store, rng, &format!("l{i}.enc"), 4 * below, width)?;
            let decoder = if i < config.scales { chain(store, rng, &format!("l{i}.dec"), width, width)? } else { Vec::new() };
            let expand = Conv::new(store, &format!("{prefix}.l{i}.expand"), 4 * below, width, rng)?;
            levels.push(Level { encoder, decoder, expand });
        }
        let tail = chain(store, rng, "tail", f[0], f[0])?;
        let output = Conv::zeroed(store, &format!("{prefix}.out"), out_channels, f[0])?;
        Ok(Self { config: config.clone(), in_channels, out_channels, head, tail, levels, output })
    }

    /// `[N, C_in, H, W]` to `[N, C_out, H, W]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        let m = self.config.size_multiple();
        if c != self.in_channels {
            return Err(Error::shape(format!("MWCNN expects {} channels, got {c}", self.in_channels)));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("{h}x{w} input is not divisible by {m}")));
        }
        let mut skips = Vec::with_capacity(self.levels.len());
        let mut z = relu_chain(&self.head, tape, store, x)?;
        for level in &self.levels {
            skips.push(z);
            let down = tape.dwt(z)?;
            z = relu_chain(&level.encoder, tape, store, down)?;
        }
        for (level, skip) in self.levels.iter().zip(skips).rev() {
            z = relu_chain(&level.decoder, tape, store, z)?;
            let bands = level.expand.apply(tape, store, z)?;
            let up = tape.idwt(bands)?;
            z = tape.add(up, skip)?;
        }
        z = relu_chain(&self.tail, tape, store, z)?;
        self.output.apply(tape, store, z)
    }
}

/// Evaluates `net` on a plain tensor.
pub fn mwcnn_forward(net: &Mwcnn, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = net.forward(&mut tape, store, v)?;
    Ok(tape.value(out).clone())
}
