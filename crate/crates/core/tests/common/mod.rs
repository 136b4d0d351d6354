//! Helpers shared by the integration tests: a finite-difference gradient
//! checker and a small synthetic stereo dataset.

#![allow(dead_code)]

use padnet_core::image::{ImageTensor, ScoredImage, StereoSample};
use padnet_core::io::{distort, procedural_reference, pseudo_mos, Distortion};
use padnet_core::layers::{Forward, Mode};
use padnet_core::tensor::init;
use padnet_core::{ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step of the central differences in 64-bit mode.
pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const FD_FLOOR: f64 = 1e-4;
/// Elements probed per tensor.
pub const FD_PROBES: usize = 12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn probe_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= FD_PROBES {
        (0..len).collect()
    } else {
        (0..FD_PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Contracts an arbitrary output with fixed random weights into a scalar.
fn scalarize<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    if out.shape().iter().product::<usize>() == 1 {
        return out.reshape(&[1]);
    }
    let weights = init::normal(&out.shape(), 1.0, &mut rng(seed ^ 0xabcdef));
    out.mul(tape.constant(weights))?.sum()
}

/// Largest relative error between the tape gradients and central finite
/// differences, for every input of `f`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars).expect("forward");
        scalarize(&tape, out, seed).unwrap().item().unwrap()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|t| tape.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&tape, &vars).expect("forward");
    let loss = scalarize(&tape, out, seed).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("input gradient").to_vec();
        for i in probe_indices(inputs[k].len(), &mut r) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    worst
}

/// Like [`check_inputs`], for a layer whose weights live in `store`; both the
/// inputs and every trainable tensor of the store are probed.
pub fn check_layer<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], mode: Mode, seed: u64, f: F) -> f64
where
    F: for<'t, 's> Fn(&Forward<'t, 's, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |store: &ParamStore<f64>, values: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let fw = Forward::new(&tape, store, mode);
        let vars: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&fw, &vars).expect("forward");
        scalarize(&tape, out, seed).unwrap().item().unwrap()
    };
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    let tape = Tape::new();
    let fw = Forward::new(&tape, store, mode);
    let vars: Vec<_> = inputs
        .iter()
        .map(|t| tape.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&fw, &vars).expect("forward");
    let loss = scalarize(&tape, out, seed).unwrap();
    let grads = tape.backward(loss).unwrap();
    grads.accumulate_into(&mut with_grads).unwrap();

    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("input gradient").to_vec();
        for i in probe_indices(inputs[k].len(), &mut r) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(store, &plus) - eval(store, &minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    let names: Vec<String> = store
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(n, _)| n.to_owned())
        .collect();
    for name in names {
        let analytic = with_grads
            .get(&name)
            .unwrap()
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; store.get(&name).unwrap().len()]);
        for i in probe_indices(analytic.len(), &mut r) {
            let shifted = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(&name).unwrap().data_mut()[i] += delta;
                eval(&s, inputs)
            };
            let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    worst
}

/// The eight stereo pairs of the end-to-end overfit test: two procedural
/// references, blur and noise, symmetric and asymmetric levels.
pub fn overfit_pairs(seed: u64) -> Vec<StereoSample> {
    let mut r = rng(seed);
    let refs: Vec<_> = (0..2).map(|_| procedural_reference(64, 64, 3, &mut r)).collect();
    let plan = [
        (0, None, 0, 0),
        (1, Some(Distortion::Blur), 1, 1),
        (0, Some(Distortion::Noise), 2, 2),
        (1, Some(Distortion::Blur), 4, 4),
        (0, Some(Distortion::Noise), 4, 4),
        (1, Some(Distortion::Blur), 0, 3),
        (0, Some(Distortion::Noise), 1, 4),
        (1, Some(Distortion::Noise), 0, 1),
    ];
    plan.iter()
        .map(|&(i, kind, a, b)| {
            let (l, rr) = &refs[i];
            let (l, rr) = match kind {
                None => (l.clone(), rr.clone()),
                Some(k) => (distort(l, k, a, &mut r).unwrap(), distort(rr, k, b, &mut r).unwrap()),
            };
            StereoSample::new(l, rr, pseudo_mos(a, b)).unwrap()
        })
        .collect()
}

/// Single views of `pairs`, each scored as if both views carried its level.
pub fn single_views(pairs: &[StereoSample], levels: &[(u8, u8)]) -> Vec<ScoredImage> {
    pairs
        .iter()
        .zip(levels)
        .flat_map(|(s, &(a, b))| {
            [
                ScoredImage {
                    image: s.left.clone(),
                    score: pseudo_mos(a, a),
                },
                ScoredImage {
                    image: s.right.clone(),
                    score: pseudo_mos(b, b),
                },
            ]
        })
        .collect()
}

pub const OVERFIT_LEVELS: [(u8, u8); 8] = [(0, 0), (1, 1), (2, 2), (4, 4), (4, 4), (0, 3), (1, 4), (0, 1)];

pub fn views(pairs: &[StereoSample]) -> Vec<ImageTensor> {
    pairs.iter().flat_map(|s| [s.left.clone(), s.right.clone()]).collect()
}

pub mod cases;

/// Moves every trainable tensor of `store` away from its initial value while
/// keeping it feasible.
pub fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    use padnet_core::tensor::Constraint;
    let mut r = rng(seed ^ 0x5eed);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let constraint = store.constraint(&name);
        let t = store.get_mut(&name).unwrap();
        if !t.requires_grad {
            continue;
        }
        for v in t.data_mut() {
            *v = match constraint {
                Some(Constraint::AtLeast(_)) if name.ends_with("gamma") => r.random_range(0.02..0.3),
                Some(Constraint::AtLeast(_)) => r.random_range(0.5..1.5),
                _ => *v + r.random_range(-0.2..0.2),
            };
        }
    }
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    init::normal(shape, 1.0, &mut rng(seed))
}

pub fn positive_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(0.1..2.0))
}
