//! Finite-difference gradient suites for the primitives and each network,
//! shared by the command line and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, coils_to_tensor, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::kspace::{make_coil_maps, make_mask, make_phantom_with_phase, ForwardOperator};
use crate::metrics::{compound_loss_graph, LossWeights};
use crate::networks::{GraphOperator, Mwcnn, MwcnnConfig, Unet, UnetConfig, Xpdnet, XpdnetConfig};
use crate::{Error, Result};

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for whole networks and the loss.
pub const NETWORK_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Primitives,
    Mwcnn,
    Unet,
    Xpdnet,
    Loss,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Primitives, Suite::Mwcnn, Suite::Unet, Suite::Xpdnet, Suite::Loss];

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "conv" | "primitives" => Suite::Primitives,
            "mwcnn" => Suite::Mwcnn,
            "unet" => Suite::Unet,
            "xpdnet" => Suite::Xpdnet,
            "loss" => Suite::Loss,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Primitives => "conv",
            Suite::Mwcnn => "mwcnn",
            Suite::Unet => "unet",
            Suite::Xpdnet => "xpdnet",
            Suite::Loss => "loss",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random(shape: &[usize], seed: u64, offset: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| offset + rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let w = random(tape.shape(x), seed, 0.0);
    let y = tape.mul_const(x, &w)?;
    Ok(tape.sum(y))
}

fn wake(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        if p.value.data().iter().all(|&v| v == 0.0) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
}

fn outcome(name: &str, report: GradCheckReport, tolerance: f64) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), max_rel_error: report.max_rel_error(), tolerance }
}

type Primitive = (&'static str, Vec<Tensor>, fn(&mut Tape, &[Var]) -> Result<Var>);

fn primitives() -> Vec<Primitive> {
    let img = |seed| random(&[1, 4, 6, 6], seed, 0.0);
    vec![
        ("conv2d", vec![img(1), random(&[3, 4, 3, 3], 2, 0.0), random(&[3], 3, 0.0)], |t, v| t.conv2d(v[0], v[1], Some(v[2]))),
        ("relu", vec![img(4).map(|x| if x >= 0.0 { x + 0.05 } else { x - 0.05 })], |t, v| Ok(t.relu(v[0]))),
        ("dwt", vec![img(5)], |t, v| t.dwt(v[0])),
        ("idwt", vec![random(&[1, 8, 3, 3], 6, 0.0)], |t, v| t.idwt(v[0])),
        ("avgpool2", vec![img(7)], |t, v| t.avgpool2(v[0])),
        ("upsample2", vec![img(8)], |t, v| t.upsample2(v[0])),
        ("concat_slice", vec![img(9), img(10)], |t, v| {
            let c = t.concat(&[v[0], v[1]])?;
            t.slice_channels(c, 3, 3)
        }),
        ("div", vec![img(11), random(&[1, 4, 6, 6], 12, 2.0)], |t, v| t.div(v[0], v[1])),
        ("fft2c", vec![img(13)], |t, v| t.fft2c(v[0])),
        ("ifft2c", vec![img(14)], |t, v| t.ifft2c(v[0])),
        ("cmul", vec![img(15), random(&[1, 2, 6, 6], 16, 0.0)], |t, v| t.cmul(v[0], v[1])),
        ("cmul_conj", vec![img(17), random(&[1, 2, 6, 6], 18, 0.0)], |t, v| t.cmul_conj(v[0], v[1])),
        ("coil_sum", vec![img(19)], |t, v| t.coil_sum(v[0])),
        ("cabs", vec![img(20)], |t, v| t.cabs(v[0], 1e-3)),
        ("coil_normalize", vec![img(21)], |t, v| t.coil_normalize(v[0], vec![true; 36])),
        ("charbonnier", vec![img(22)], |t, v| Ok(t.charbonnier(v[0], 1e-2))),
        ("pow_scalar", vec![random(&[1, 1, 4, 4], 23, 1.5)], |t, v| Ok(t.pow_scalar(v[0], 0.3))),
        ("filter_valid", vec![img(24)], |t, v| t.filter_valid(v[0], &random(&[3, 3], 25, 0.0))),
        ("scale_by", vec![random(&[1], 26, 0.0), img(27)], |t, v| t.scale_by(v[0], v[1])),
    ]
}

fn check_primitives() -> Result<Vec<CheckOutcome>> {
    primitives()
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, f))| {
            let mut store = ParamStore::new();
            let report = check_gradients(&mut store, &inputs, &GradCheckConfig::default(), |t, _, v| {
                let y = f(t, v)?;
                project(t, y, 100 + i as u64)
            })?;
            Ok(outcome(name, report, PRIMITIVE_TOL))
        })
        .collect()
}

/// A small step keeps probes of biases, which shift whole channels, from
/// crossing ReLU kinks.
fn network_config() -> GradCheckConfig {
    GradCheckConfig { step: 1e-6, samples_per_tensor: 50, ..Default::default() }
}

fn check_mwcnn() -> Result<CheckOutcome> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Mwcnn::new(&mut store, "m", &MwcnnConfig { scales: 3, filters: vec![4, 6, 8], blocks: 2 }, 2, 2, &mut rng)?;
    wake(&mut store, 2);
    let target = random(&[1, 1, 32, 32], 13, 0.0).map(|v| 0.5 + 0.4 * v);
    let report = check_gradients(&mut store, &[random(&[1, 2, 32, 32], 3, 0.0)], &network_config(), |t, s, v| {
        let y = net.forward(t, s, v[0])?;
        let mag = t.cabs(y, 1e-6)?;
        let tv = t.constant(target.clone());
        Ok(compound_loss_graph(t, mag, tv, &LossWeights::default())?.loss)
    })?;
    Ok(outcome("mwcnn+loss", report, NETWORK_TOL))
}

fn check_unet() -> Result<CheckOutcome> {
    let n = 16;
    let maps = make_coil_maps(n, 2);
    let mask = make_mask(n, n, 4, 4, 0)?;
    let x = crate::autodiff::image_to_tensor(&make_phantom_with_phase(n, 0.3));
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Unet::new(&mut store, "u", &UnetConfig { depth: 2, base_filters: 4 }, &mut rng)?;
    wake(&mut store, 6);
    let support = vec![true; n * n];
    let report = check_gradients(&mut store, &[coils_to_tensor(maps.data())], &network_config(), |t, s, v| {
        let refined = net.refine(t, s, v[0], &support)?;
        let op = GraphOperator::new(t, &mask, refined)?;
        let xv = t.constant(x.clone());
        let k = op.forward(t, xv)?;
        project(t, k, 7)
    })?;
    Ok(outcome("unet+operator", report, NETWORK_TOL))
}

fn check_xpdnet() -> Result<CheckOutcome> {
    let n = 16;
    let maps = make_coil_maps(n, 2);
    let mask = make_mask(n, n, 4, 4, 0)?;
    // flat phantom regions would stack many pixels on the same ReLU kink
    let mut x = make_phantom_with_phase(n, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for z in &mut x.data {
        *z += crate::Complex64::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    }
    let y = ForwardOperator::new(mask.clone(), maps.clone())?.apply_forward(&x)?;
    let cfg = XpdnetConfig {
        n_unrolled: 2,
        buffer_size: 5,
        refine_maps: true,
        mwcnn: MwcnnConfig { scales: 2, filters: vec![4, 6], blocks: 1 },
        unet: UnetConfig { depth: 2, base_filters: 2 },
        alpha_init: 0.5,
    };
    let mut net = Xpdnet::new(&cfg, 8)?;
    wake(&mut net.params, 9);
    let mut store = net.params.clone();
    let report = check_gradients(&mut store, &[], &network_config(), |t, s, _| {
        let mut local = net.clone();
        local.params = s.clone();
        let out = local.forward(t, &y, &mask, &maps)?;
        project(t, out, 10)
    })?;
    Ok(outcome("xpdnet(2 iterations)", report, NETWORK_TOL))
}

fn check_loss() -> Result<CheckOutcome> {
    let target = random(&[1, 1, 32, 32], 11, 0.0).map(|v| 0.5 + 0.4 * v);
    let pred = random(&[1, 1, 32, 32], 12, 0.0).map(|v| 0.5 + 0.4 * v);
    let mut store = ParamStore::new();
    let report = check_gradients(&mut store, &[pred], &GradCheckConfig::default(), |t, _, v| {
        let tv = t.constant(target.clone());
        Ok(compound_loss_graph(t, v[0], tv, &LossWeights::default())?.loss)
    })?;
    Ok(outcome("compound loss", report, NETWORK_TOL))
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Primitives => check_primitives(),
        Suite::Mwcnn => Ok(vec![check_mwcnn()?]),
        Suite::Unet => Ok(vec![check_unet()?]),
        Suite::Xpdnet => Ok(vec![check_xpdnet()?]),
        Suite::Loss => Ok(vec![check_loss()?]),
    }
}

/// Runs the named suite, or all of them for `"all"`.
pub fn run_named(name: &str) -> Result<Vec<CheckOutcome>> {
    if name == "all" {
        let mut out = Vec::new();
        for s in Suite::ALL {
            out.extend(run_suite(s)?);
        }
        return Ok(out);
    }
    let suite = Suite::parse(name).ok_or_else(|| Error::config(format!("unknown gradcheck module {name}")))?;
    run_suite(suite)
}
