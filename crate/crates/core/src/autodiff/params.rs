use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    /// He-normal initialised convolution kernel `[out, in, k, k]`.
    pub fn add_conv<R: Rng + ?Sized>(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize, rng: &mut R) -> Result<(ParamId, ParamId)> {
        let fan_in = (in_ch * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let data = (0..out_ch * in_ch * k * k).map(|_| normal.sample(rng)).collect();
        let w = self.add(format!("{name}.weight"), Tensor::new(vec![out_ch, in_ch, k, k], data)?)?;
        let b = self.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?;
        Ok((w, b))
    }

    /// Convolution with all-zero weights and bias.
    pub fn add_conv_zero(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) -> Result<(ParamId, ParamId)> {
        let w = self.add(format!("{name}.weight"), Tensor::zeros(&[out_ch, in_ch, k, k]))?;
        let b = self.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?;
        Ok((w, b))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
