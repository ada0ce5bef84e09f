//! `key=value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! ```text
//! n_unrolled buffer_size refine_maps alpha_init
//! mwcnn.scales mwcnn.filters mwcnn.blocks unet.depth unet.base_filters
//! epochs batch_size acceleration acs seed finetune_epochs finetune_contrast
//! lr beta1 beta2 eps loss.alpha loss.beta grad_clip max_steps checkpoint_every
//! data.size data.coils data.slices data.seed
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use super::{DatasetSpec, TrainConfig};
use crate::kspace::Contrast;
use crate::networks::{MwcnnConfig, UnetConfig, XpdnetConfig};
use crate::optim::RadamConfig;
use crate::{Error, Result};

/// Network, optimizer and training settings of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: XpdnetConfig,
    pub train: TrainConfig,
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::config(format!("cannot parse {key}={v}")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| value(key, s)).collect()
}

fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "" | "none" => Ok(None),
        s => value(key, s).map(Some),
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

/// Parses the `key=value` lines into a map, rejecting duplicates.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::config(format!("line {}: duplicate key {}", n + 1, k.trim())));
        }
    }
    Ok(map)
}

impl ExperimentConfig {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    /// Applies every entry of `map` on top of the defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "n_unrolled" => m.n_unrolled = value(key, v)?,
            "buffer_size" => m.buffer_size = value(key, v)?,
            "refine_maps" => m.refine_maps = value(key, v)?,
            "alpha_init" => m.alpha_init = value(key, v)?,
            "mwcnn.scales" => m.mwcnn.scales = value(key, v)?,
            "mwcnn.filters" => m.mwcnn.filters = list(key, v)?,
            "mwcnn.blocks" => m.mwcnn.blocks = value(key, v)?,
            "unet.depth" => m.unet.depth = value(key, v)?,
            "unet.base_filters" => m.unet.base_filters = value(key, v)?,
            "epochs" => t.epochs = value(key, v)?,
            "batch_size" => t.batch_size = value(key, v)?,
            "acceleration" => t.acceleration = value(key, v)?,
            "acs" => t.acs = optional(key, v)?,
            "seed" => t.seed = value(key, v)?,
            "finetune_epochs" => t.finetune_epochs = value(key, v)?,
            "finetune_contrast" => {
                t.finetune_contrast = match v.trim() {
                    "" | "none" => None,
                    s => Some(Contrast::parse(s).ok_or_else(|| Error::config(format!("unknown contrast {s}")))?),
                }
            }
            "lr" => t.optimizer.lr = value(key, v)?,
            "beta1" => t.optimizer.beta1 = value(key, v)?,
            "beta2" => t.optimizer.beta2 = value(key, v)?,
            "eps" => t.optimizer.eps = value(key, v)?,
            "loss.alpha" => t.loss.alpha = value(key, v)?,
            "loss.beta" => t.loss.beta = value(key, v)?,
            "grad_clip" => t.grad_clip = optional(key, v)?,
            "max_steps" => t.max_steps = optional(key, v)?,
            "checkpoint_every" => t.checkpoint_every = value(key, v)?,
            "data.size" => t.data.size = value(key, v)?,
            "data.coils" => t.data.coils = value(key, v)?,
            "data.slices" => t.data.slices = value(key, v)?,
            "data.seed" => t.data.seed = value(key, v)?,
            _ => return Err(Error::config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let m = self.model.size_multiple();
        if self.train.data.size % m != 0 {
            return Err(Error::config(format!("data.size {} must be divisible by {m}", self.train.data.size)));
        }
        Ok(())
    }

    /// Canonical form: every key, sorted.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let (m, t) = (&self.model, &self.train);
        let filters: Vec<String> = m.mwcnn.filters.iter().map(|f| f.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("n_unrolled", m.n_unrolled.to_string()),
            ("buffer_size", m.buffer_size.to_string()),
            ("refine_maps", m.refine_maps.to_string()),
            ("alpha_init", m.alpha_init.to_string()),
            ("mwcnn.scales", m.mwcnn.scales.to_string()),
            ("mwcnn.filters", filters.join(",")),
            ("mwcnn.blocks", m.mwcnn.blocks.to_string()),
            ("unet.depth", m.unet.depth.to_string()),
            ("unet.base_filters", m.unet.base_filters.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("acceleration", t.acceleration.to_string()),
            ("acs", show(&t.acs)),
            ("seed", t.seed.to_string()),
            ("finetune_epochs", t.finetune_epochs.to_string()),
            ("finetune_contrast", t.finetune_contrast.map_or("none".to_string(), |c| c.name().to_string())),
            ("lr", t.optimizer.lr.to_string()),
            ("beta1", t.optimizer.beta1.to_string()),
            ("beta2", t.optimizer.beta2.to_string()),
            ("eps", t.optimizer.eps.to_string()),
            ("loss.alpha", t.loss.alpha.to_string()),
            ("loss.beta", t.loss.beta.to_string()),
            ("grad_clip", show(&t.grad_clip)),
            ("max_steps", show(&t.max_steps)),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("data.size", t.data.size.to_string()),
            ("data.coils", t.data.coils.to_string()),
            ("data.slices", t.data.slices.to_string()),
            ("data.seed", t.data.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_kv_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Small network used by tests and quick experiments.
pub fn desk_model() -> XpdnetConfig {
    XpdnetConfig {
        n_unrolled: 6,
        buffer_size: 5,
        refine_maps: true,
        mwcnn: MwcnnConfig { scales: 3, filters: vec![8, 16, 32], blocks: 1 },
        unet: UnetConfig { depth: 2, base_filters: 4 },
        alpha_init: 0.5,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 1,
            acceleration: 4,
            acs: None,
            seed: 0,
            finetune_epochs: 1,
            finetune_contrast: None,
            optimizer: RadamConfig::default(),
            loss: crate::metrics::LossWeights::default(),
            grad_clip: None,
            max_steps: None,
            checkpoint_every: 0,
            data: DatasetSpec::default(),
        }
    }
}
