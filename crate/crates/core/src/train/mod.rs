//! Synthetic training data and the training loop.
//!
//! Each step reconstructs one slice (batch size 1), compares its magnitude to
//! the ground truth with the compound loss, backpropagates and applies one
//! RAdam update. Slice order is reshuffled every epoch from the run seed, so
//! a run is reproducible bit for bit.

mod config;

pub use config::{desk_model, parse_kv, ExperimentConfig};

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::io::{csv_error, Checkpoint, NamedTensor};
use crate::kspace::{default_acs, make_coil_maps, make_mask, random_phantom, CoilKSpace, ComplexImage, Contrast, ForwardOperator, SamplingMask, SensitivitySet};
use crate::metrics::{compound_loss_graph, evaluate_slice, LossWeights, SliceMetrics};
use crate::networks::Xpdnet;
use crate::optim::{RadamConfig, RadamState};
use crate::pdhg::zero_filled;
use crate::sense::estimate_maps_lowfreq;
use crate::{Error, Result};

/// Smoothing of the magnitude inside the loss graph.
pub const MAGNITUDE_EPS: f64 = 1e-6;

/// Size and seed of a generated slice set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub size: usize,
    pub coils: usize,
    pub slices: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { size: 32, coils: 2, slices: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Always 1.
    pub batch_size: usize,
    pub acceleration: usize,
    /// Calibration lines; `None` uses [`default_acs`].
    pub acs: Option<usize>,
    pub seed: u64,
    pub finetune_epochs: usize,
    /// Fine-tuning runs only when a contrast is given.
    pub finetune_contrast: Option<Contrast>,
    pub optimizer: RadamConfig,
    pub loss: LossWeights,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
    /// Stop after this many updates in total.
    pub max_steps: Option<usize>,
    /// Emit a checkpoint every this many steps; 0 disables periodic ones.
    pub checkpoint_every: usize,
    pub data: DatasetSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::config(format!("batch size must be 1, got {}", self.batch_size)));
        }
        if self.acceleration == 0 {
            return Err(Error::config("acceleration must be at least 1"));
        }
        if self.data.slices == 0 || self.data.coils == 0 || self.data.size == 0 {
            return Err(Error::config("dataset must have slices, coils and a size"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip must be positive"));
            }
        }
        self.optimizer.validate()
    }

    pub fn acs_lines(&self) -> usize {
        self.acs.unwrap_or_else(|| default_acs(self.data.size, self.acceleration))
    }
}

/// One training or evaluation slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub contrast: Contrast,
    pub truth: ComplexImage,
    pub kspace: CoilKSpace,
    pub mask: SamplingMask,
    /// Estimated from the calibration lines of `kspace`.
    pub maps: SensitivitySet,
}

impl Sample {
    pub fn target(&self) -> Vec<f64> {
        self.truth.magnitude()
    }
}

/// Random phantoms cycling through the four anatomical contrasts, simulated
/// with smooth coil maps and an equispaced mask.
pub fn synthetic_dataset(spec: &DatasetSpec, acceleration: usize, acs: usize) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = make_mask(spec.size, spec.size, acceleration, acs, 0)?;
    let true_maps = make_coil_maps(spec.size, spec.coils);
    let op = ForwardOperator::new(mask.clone(), true_maps)?;
    (0..spec.slices)
        .map(|i| {
            let contrast = Contrast::ALL_ANATOMICAL[i % 4];
            let truth = random_phantom(spec.size, contrast, &mut rng);
            let kspace = op.apply_forward(&truth)?;
            let maps = estimate_maps_lowfreq(&kspace, &mask, true)?;
            Ok(Sample { contrast, truth, kspace, mask: mask.clone(), maps })
        })
        .collect()
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub l1_term: f64,
    pub msssim_term: f64,
}

pub fn write_loss_csv<W: Write>(out: W, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "epoch", "loss", "l1_term", "msssim_term"]).map_err(csv_error)?;
    for r in history {
        w.write_record([r.step.to_string(), r.epoch.to_string(), format!("{:e}", r.loss), format!("{:e}", r.l1_term), format!("{:e}", r.msssim_term)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average of the loss over `window` steps.
pub fn smoothed_loss(history: &[LossRecord], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..history.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            history[lo..=i].iter().map(|r| r.loss).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Loss of one sample as graph nodes; returns (loss, l1, ms-ssim) values.
fn step_loss(tape: &mut Tape, model: &Xpdnet, sample: &Sample, weights: &LossWeights) -> Result<crate::metrics::LossTerms> {
    let out = model.forward(tape, &sample.kspace, &sample.mask, &sample.maps)?;
    let mag = tape.cabs(out, MAGNITUDE_EPS)?;
    let (h, w) = (sample.truth.height, sample.truth.width);
    let target = tape.constant(Tensor::new(vec![1, 1, h, w], sample.target())?);
    compound_loss_graph(tape, mag, target, weights)
}

fn clip_gradients(model: &mut Xpdnet, max_norm: f64) {
    let norm = model.params.iter().map(|(_, p)| p.grad.data().iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in model.params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Xpdnet,
    pub optimizer: RadamState,
    pub history: Vec<LossRecord>,
    /// Indices of the samples seen in each step, in order.
    pub visited: Vec<usize>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        to_checkpoint(&self.model, &self.optimizer, cfg)
    }
}

/// Trains `model` on `data`; `on_checkpoint` receives a checkpoint every
/// `checkpoint_every` steps.
pub fn train<F>(mut model: Xpdnet, cfg: &ExperimentConfig, data: &[Sample], mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Checkpoint) -> Result<()>,
{
    let tc = &cfg.train;
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let mut optimizer = RadamState::new(tc.optimizer, &model.params)?;
    let mut history = Vec::new();
    let mut visited = Vec::new();
    let all: Vec<usize> = (0..data.len()).collect();
    let tuned: Vec<usize> = match tc.finetune_contrast {
        Some(c) => (0..data.len()).filter(|&i| data[i].contrast == c).collect(),
        None => Vec::new(),
    };
    if tc.finetune_contrast.is_some() && tc.finetune_epochs > 0 && tuned.is_empty() {
        return Err(Error::input("no training samples carry the fine-tuning contrast"));
    }
    let mut stages = vec![(&all, tc.epochs)];
    if !tuned.is_empty() {
        stages.push((&tuned, tc.finetune_epochs));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut epoch = 0;
    'outer: for (pool, epochs) in stages {
        for _ in 0..epochs {
            let mut order = pool.clone();
            order.shuffle(&mut rng);
            for idx in order {
                if tc.max_steps.is_some_and(|m| history.len() >= m) {
                    break 'outer;
                }
                let mut tape = Tape::new();
                let terms = step_loss(&mut tape, &model, &data[idx], &tc.loss)?;
                let loss = tape.value(terms.loss).item();
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss {loss} at step {} (sample {idx})", history.len() + 1)));
                }
                model.params.zero_grad();
                tape.backward(terms.loss, &mut model.params)?;
                if let Some(c) = tc.grad_clip {
                    clip_gradients(&mut model, c);
                }
                optimizer.step(&mut model.params)?;
                history.push(LossRecord {
                    step: history.len() + 1,
                    epoch,
                    loss,
                    l1_term: tape.value(terms.l1).item(),
                    msssim_term: tape.value(terms.ms_ssim).item(),
                });
                visited.push(idx);
                if tc.checkpoint_every > 0 && history.len() % tc.checkpoint_every == 0 {
                    on_checkpoint(history.len(), &to_checkpoint(&model, &optimizer, cfg))?;
                }
            }
            epoch += 1;
        }
    }
    model.params.zero_grad();
    Ok(TrainOutcome { model, optimizer, history, visited })
}

/// Packs parameters, optimizer moments and the experiment config.
pub fn to_checkpoint(model: &Xpdnet, optimizer: &RadamState, cfg: &ExperimentConfig) -> Checkpoint {
    let mut exp = cfg.clone();
    exp.model = model.config.clone();
    let params = model.params.iter().map(|(_, p)| NamedTensor { name: p.name.clone(), value: p.value.clone() }).collect();
    let names: Vec<&str> = model.params.iter().map(|(_, p)| p.name.as_str()).collect();
    let mut state = Vec::with_capacity(2 * names.len());
    for (prefix, moments) in [("m", optimizer.first_moments()), ("v", optimizer.second_moments())] {
        for (name, t) in names.iter().zip(moments) {
            state.push(NamedTensor { name: format!("{prefix}/{name}"), value: t.clone() });
        }
    }
    Checkpoint { config: exp.to_map(), params, optimizer_step: optimizer.step_count(), optimizer: state }
}

/// Rebuilds the network and optimizer stored in a checkpoint.
pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Xpdnet, RadamState, ExperimentConfig)> {
    let cfg = ExperimentConfig::from_map(&ckpt.config)?;
    let mut model = Xpdnet::new(&cfg.model, 0)?;
    let stored: BTreeMap<&str, &Tensor> = ckpt.params.iter().map(|r| (r.name.as_str(), &r.value)).collect();
    if stored.len() != model.params.len() {
        return Err(Error::input(format!("checkpoint has {} tensors, network needs {}", stored.len(), model.params.len())));
    }
    for p in model.params.iter_mut() {
        let t = stored.get(p.name.as_str()).ok_or_else(|| Error::input(format!("checkpoint lacks {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::shape(format!("{}: stored {:?}, expected {:?}", p.name, t.shape(), p.value.shape())));
        }
        p.value = (*t).clone();
    }
    let moments: BTreeMap<&str, &Tensor> = ckpt.optimizer.iter().map(|r| (r.name.as_str(), &r.value)).collect();
    let lookup = |prefix: &str| -> Result<Vec<Tensor>> {
        model
            .params
            .iter()
            .map(|(_, p)| {
                moments.get(format!("{prefix}/{}", p.name).as_str()).map(|t| (*t).clone()).ok_or_else(|| Error::input(format!("checkpoint lacks {prefix}/{}", p.name)))
            })
            .collect()
    };
    let optimizer = if ckpt.optimizer.is_empty() {
        RadamState::new(cfg.train.optimizer, &model.params)?
    } else {
        RadamState::from_parts(cfg.train.optimizer, ckpt.optimizer_step, lookup("m")?, lookup("v")?)?
    };
    Ok((model, optimizer, cfg))
}

/// Zero-filled and network metrics for each sample.
pub fn evaluate(model: &Xpdnet, data: &[Sample]) -> Result<Vec<(SliceMetrics, SliceMetrics)>> {
    data.iter()
        .map(|s| {
            let (h, w) = (s.truth.height, s.truth.width);
            let target = s.target();
            let op = ForwardOperator::new(s.mask.clone(), s.maps.clone())?;
            let zf = evaluate_slice(&zero_filled(&s.kspace, &op)?, &target, h, w)?;
            let net = evaluate_slice(&model.reconstruct(&s.kspace, &s.mask, &s.maps)?.magnitude(), &target, h, w)?;
            Ok((zf, net))
        })
        .collect()
}
