use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{check_gradients, coils_to_tensor, image_to_tensor, GradCheckConfig, Tensor};
use crate::kspace::{make_coil_maps, make_mask, make_phantom_with_phase, ForwardOperator, SamplingMask, SensitivitySet};
use crate::Error;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Gives every all-zero parameter small random values so gradients reach
/// the whole network.
fn wake(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        if p.value.data().iter().all(|&v| v == 0.0) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
}

fn small_mwcnn() -> MwcnnConfig {
    MwcnnConfig { scales: 2, filters: vec![4, 6], blocks: 1 }
}

fn small_xpdnet(n_unrolled: usize, refine_maps: bool) -> XpdnetConfig {
    XpdnetConfig {
        n_unrolled,
        buffer_size: 2,
        refine_maps,
        mwcnn: small_mwcnn(),
        unet: UnetConfig { depth: 2, base_filters: 2 },
        alpha_init: 0.5,
    }
}

struct Problem {
    y: crate::kspace::CoilKSpace,
    mask: SamplingMask,
    maps: SensitivitySet,
    truth: crate::kspace::ComplexImage,
    op: ForwardOperator,
}

fn problem(n: usize, coils: usize, accel: usize) -> Problem {
    let truth = make_phantom_with_phase(n, 0.3);
    let maps = make_coil_maps(n, coils);
    let mask = if accel == 1 { SamplingMask::full(n, n) } else { make_mask(n, n, accel, n / 4, 0).unwrap() };
    let op = ForwardOperator::new(mask.clone(), maps.clone()).unwrap();
    let y = op.apply_forward(&truth).unwrap();
    Problem { y, mask, maps, truth, op }
}

#[test]
fn mwcnn_keeps_shape_and_starts_at_zero() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mwcnn::new(&mut store, "m", &MwcnnConfig { scales: 3, filters: vec![4, 8, 8], blocks: 2 }, 3, 5, &mut rng).unwrap();
    let x = random_tensor(&[1, 3, 16, 24], 1);
    let out = mwcnn_forward(&net, &store, &x).unwrap();
    assert_eq!(out.shape(), &[1, 5, 16, 24]);
    assert!(out.data().iter().all(|&v| v == 0.0));
    wake(&mut store, 2);
    let out = mwcnn_forward(&net, &store, &x).unwrap();
    assert!(out.norm() > 0.0);
}

#[test]
fn mwcnn_rejects_bad_shapes_and_configs() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mwcnn::new(&mut store, "m", &small_mwcnn(), 2, 2, &mut rng).unwrap();
    let err = mwcnn_forward(&net, &store, &random_tensor(&[1, 2, 10, 8], 1)).unwrap_err();
    assert!(matches!(err, Error::InvalidShape(_)));
    let err = mwcnn_forward(&net, &store, &random_tensor(&[1, 3, 8, 8], 1)).unwrap_err();
    assert!(matches!(err, Error::InvalidShape(_)));
    let bad = MwcnnConfig { scales: 3, filters: vec![4, 4], blocks: 1 };
    assert!(matches!(Mwcnn::new(&mut store, "b", &bad, 2, 2, &mut rng), Err(Error::InvalidConfig(_))));
}

#[test]
fn mwcnn_gradients_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mwcnn::new(&mut store, "m", &small_mwcnn(), 2, 2, &mut rng).unwrap();
    wake(&mut store, 4);
    let probe = random_tensor(&[1, 2, 8, 8], 5);
    let report = check_gradients(&mut store, &[random_tensor(&[1, 2, 8, 8], 6)], &GradCheckConfig::default(), |t, s, v| {
        let out = net.forward(t, s, v[0])?;
        let weighted = t.mul_const(out, &probe)?;
        Ok(t.sum(weighted))
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn refiner_output_is_normalized_for_any_weights() {
    let maps = make_coil_maps(16, 3);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Unet::new(&mut store, "u", &UnetConfig { depth: 2, base_filters: 4 }, &mut rng).unwrap();
    wake(&mut store, 8);
    let refined = unet_refine_maps(&net, &store, &maps).unwrap();
    assert!(refined.energy().iter().all(|e| (e - 1.0).abs() < 1e-12 || *e == 0.0));
}

#[test]
fn refiner_starts_as_renormalization() {
    let maps = make_coil_maps(16, 3);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Unet::new(&mut store, "u", &UnetConfig::default(), &mut rng).unwrap();
    let refined = unet_refine_maps(&net, &store, &maps).unwrap();
    for (a, b) in refined.data().data.iter().zip(&maps.data().data) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn refiner_and_operator_gradients_check() {
    let p = problem(8, 2, 2);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = Unet::new(&mut store, "u", &UnetConfig { depth: 1, base_filters: 2 }, &mut rng).unwrap();
    wake(&mut store, 11);
    let support = vec![true; 64];
    let x = image_to_tensor(&p.truth);
    let maps0 = coils_to_tensor(p.maps.data());
    let probe = random_tensor(&[1, 4, 8, 8], 12);
    let report = check_gradients(&mut store, &[maps0], &GradCheckConfig::default(), |t, s, v| {
        let refined = net.refine(t, s, v[0], &support)?;
        let op = GraphOperator::new(t, &p.mask, refined)?;
        let xv = t.constant(x.clone());
        let k = op.forward(t, xv)?;
        let weighted = t.mul_const(k, &probe)?;
        Ok(t.sum(weighted))
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn graph_operator_matches_operator() {
    let p = problem(16, 3, 4);
    let mut tape = Tape::new();
    let maps = tape.constant(coils_to_tensor(p.maps.data()));
    let op = GraphOperator::new(&tape, &p.mask, maps).unwrap();
    let x = tape.constant(image_to_tensor(&p.truth));
    let k = op.forward(&mut tape, x).unwrap();
    assert_eq!(tape.value(k), &coils_to_tensor(&p.y));
    let back = op.adjoint(&mut tape, k).unwrap();
    assert_eq!(tape.value(back), &image_to_tensor(&p.op.apply_adjoint(&p.y).unwrap()));
}

#[test]
fn identity_at_initialization_is_exact() {
    let p = problem(16, 2, 4);
    let net = Xpdnet::new(&small_xpdnet(3, false), 1).unwrap();
    let out = xpdnet_forward(&p.y, &p.mask, &p.maps, &net).unwrap();
    assert_eq!(out, p.op.apply_adjoint(&p.y).unwrap());

    let mut zeroed = net.clone();
    for p in zeroed.params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert_eq!(xpdnet_forward(&p.y, &p.mask, &p.maps, &zeroed).unwrap(), out);
}

#[test]
fn full_sampling_recovers_the_object_at_initialization() {
    let p = problem(16, 4, 1);
    for refine in [false, true] {
        let net = Xpdnet::new(&small_xpdnet(2, refine), 2).unwrap();
        let out = net.reconstruct(&p.y, &p.mask, &p.maps).unwrap();
        let support = p.maps.energy();
        for ((a, b), e) in out.data.iter().zip(&p.truth.data).zip(&support) {
            if *e > 0.0 {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }
}

#[test]
fn buffer_replicas_do_not_change_the_initial_output() {
    let p = problem(16, 2, 4);
    let mut cfg = small_xpdnet(2, false);
    let one = Xpdnet::new(&cfg, 3).unwrap().reconstruct(&p.y, &p.mask, &p.maps).unwrap();
    cfg.buffer_size = 5;
    let five = Xpdnet::new(&cfg, 3).unwrap().reconstruct(&p.y, &p.mask, &p.maps).unwrap();
    assert_eq!(one, five);
}

#[test]
fn no_network_acts_on_kspace() {
    let p = problem(16, 2, 4);
    let net = Xpdnet::new(&small_xpdnet(2, true), 4).unwrap();
    let mut tape = Tape::new();
    net.forward(&mut tape, &p.y, &p.mask, &p.maps).unwrap();
    assert!(!tape.has_kspace_convolution());
}

#[test]
fn xpdnet_gradients_check() {
    let p = problem(16, 2, 4);
    let mut net = Xpdnet::new(&small_xpdnet(2, true), 5).unwrap();
    wake(&mut net.params, 6);
    let probe = random_tensor(&[1, 2, 16, 16], 7);
    let mut store = net.params.clone();
    // a small step keeps bias probes from crossing ReLU kinks
    let cfg = GradCheckConfig { step: 1e-6, samples_per_tensor: 20, ..Default::default() };
    let report = check_gradients(&mut store, &[], &cfg, |t, s, _| {
        let mut local = net.clone();
        local.params = s.clone();
        let out = local.forward(t, &p.y, &p.mask, &p.maps)?;
        let weighted = t.mul_const(out, &probe)?;
        Ok(t.sum(weighted))
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn shape_mismatches_are_rejected() {
    let p = problem(16, 2, 4);
    let net = Xpdnet::new(&small_xpdnet(1, false), 0).unwrap();
    let other_maps = make_coil_maps(16, 3);
    assert!(matches!(net.reconstruct(&p.y, &p.mask, &other_maps), Err(Error::InvalidShape(_))));
    let q = problem(12, 2, 4);
    let cfg = XpdnetConfig { mwcnn: MwcnnConfig { scales: 3, filters: vec![2, 2, 2], blocks: 1 }, ..small_xpdnet(1, false) };
    let net = Xpdnet::new(&cfg, 0).unwrap();
    assert!(matches!(net.reconstruct(&q.y, &q.mask, &q.maps), Err(Error::InvalidShape(_))));
    assert!(matches!(Xpdnet::new(&XpdnetConfig { n_unrolled: 0, ..Default::default() }, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn runtime_grows_linearly_with_unrolled_depth() {
    let p = problem(32, 2, 4);
    let build = |n: usize| {
        let cfg = XpdnetConfig { mwcnn: MwcnnConfig { scales: 2, filters: vec![8, 16], blocks: 1 }, ..small_xpdnet(n, false) };
        Xpdnet::new(&cfg, 0).unwrap()
    };
    let nets = [build(4), build(8)];
    // interleaved so both depths see the same background load
    let mut best = [f64::INFINITY; 2];
    for _ in 0..7 {
        for (net, b) in nets.iter().zip(&mut best) {
            let start = Instant::now();
            net.reconstruct(&p.y, &p.mask, &p.maps).unwrap();
            *b = b.min(start.elapsed().as_secs_f64());
        }
    }
    let [t4, t8] = best;
    let ratio = t8 / t4;
    assert!((1.6..=2.4).contains(&ratio), "t8/t4 = {ratio}");
}
