use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per tensor; tensors at most this large are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_tensor: 50, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn coordinates(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

/// Per-coordinate relative error, with the denominator floored at a thousandth
/// of the largest analytic gradient in the same tensor so that coordinates
/// whose true gradient is ~0 are compared on the tensor's own scale.
fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3 * scale).max(1e-300);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for every input tensor and every parameter in `store`.
pub fn check_gradients<F>(store: &mut ParamStore, inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, store, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, store, &vars)?;
    let grads = tape.gradients(loss)?;

    let mut analytic: Vec<(String, Tensor)> = Vec::new();
    for (i, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        analytic.push((format!("input{i}"), g));
    }
    let mut param_grads: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
    for (v, id) in tape.parameters() {
        if let Some(g) = grads.wrt(v) {
            param_grads[id.0].add_assign(g);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut inputs = inputs.to_vec();
    let h = cfg.step;

    for (i, (name, g)) in analytic.iter().enumerate() {
        let coords = pick(g.len(), cfg.samples_per_tensor, &mut rng);
        let scale = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut check = TensorCheck { name: name.clone(), checked: coords.len(), max_rel_error: 0.0, worst: (0, 0.0, 0.0) };
        for k in coords {
            let orig = inputs[i].data()[k];
            inputs[i].data_mut()[k] = orig + h;
            let plus = eval(store, &inputs)?;
            inputs[i].data_mut()[k] = orig - h;
            let minus = eval(store, &inputs)?;
            inputs[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(g.data()[k], numeric, scale);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst = (k, g.data()[k], numeric);
            }
        }
        report.tensors.push(check);
    }

    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let g = &param_grads[id.0];
        let coords = pick(g.len(), cfg.samples_per_tensor, &mut rng);
        let scale = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut check = TensorCheck { name, checked: coords.len(), max_rel_error: 0.0, worst: (0, 0.0, 0.0) };
        for k in coords {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + h;
            let plus = eval(store, &inputs)?;
            store.get_mut(id).value.data_mut()[k] = orig - h;
            let minus = eval(store, &inputs)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(g.data()[k], numeric, scale);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst = (k, g.data()[k], numeric);
            }
        }
        report.tensors.push(check);
    }
    Ok(report)
}

fn pick(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, count).into_vec();
        v.sort_unstable();
        v
    }
}
