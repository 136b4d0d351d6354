//! One finite-difference case per differentiable operation.

use padnet_core::autoencoder::reconstruction_loss as recon_loss;
use padnet_core::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Gdn, Linear, Mode, ResidualBlock};
use padnet_core::regressor::{quality_loss as score_loss, Fusion};
use padnet_core::rivalry::{
    normalize_likelihoods, normalize_priors, residual_error_map, PriorGenerator, RivalryBundle,
};
use padnet_core::{ParamStore, Var};

use super::{check_inputs, check_layer, jitter, positive_tensor, random_tensor, rng};

pub type Case = (&'static str, fn(u64) -> f64);

/// Seeds every case is run with.
pub const SEEDS: u64 = 10;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-3;

pub const CASES: &[Case] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("div", div),
    ("scalar_ops", scalar_ops),
    ("square", square),
    ("relu", relu),
    ("softplus", softplus),
    ("sum_mean", sum_mean),
    ("mse", mse),
    ("reshape", reshape),
    ("mean_channels", mean_channels),
    ("concat_channels", concat_channels),
    ("concat_narrow_batch", concat_narrow_batch),
    ("conv2d", conv2d),
    ("conv2d_strided", conv2d_strided),
    ("conv_transpose2d", conv_transpose2d),
    ("max_pool2d", max_pool2d),
    ("global_max_pool", global_max_pool),
    ("linear", linear),
    ("upsample_bilinear", upsample_bilinear),
    ("gdn", gdn),
    ("igdn", igdn),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_eval", batch_norm_eval),
    ("residual_block", residual_block),
    ("residual_projection", residual_projection),
    ("error_map", error_map),
    ("normalization", normalization),
    ("prior_map", prior_map),
    ("fusion", fusion),
    ("reconstruction_loss", reconstruction_loss),
    ("quality_loss", quality_loss),
];

pub fn worst_over_seeds(case: fn(u64) -> f64) -> f64 {
    (0..SEEDS).map(case).fold(0.0, f64::max)
}

fn store_with(seed: u64, build: impl FnOnce(&mut ParamStore<f64>)) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    build(&mut store);
    jitter(&mut store, seed);
    store
}

fn add(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4], seed);
    let b = random_tensor(&[2, 3, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| v[0].add(v[1]))
}

fn sub(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4], seed);
    let b = random_tensor(&[2, 3, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| v[0].sub(v[1]))
}

fn mul(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4], seed);
    let b = random_tensor(&[2, 3, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| v[0].mul(v[1]))
}

fn div(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4], seed);
    let b = positive_tensor(&[2, 3, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| v[0].div(v[1]))
}

fn scalar_ops(seed: u64) -> f64 {
    let a = random_tensor(&[3, 5], seed);
    check_inputs(&[a], seed, |_, v| v[0].add_scalar(0.7)?.mul_scalar(-1.3))
}

fn square(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[4, 4], seed)], seed, |_, v| v[0].square())
}

fn relu(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[4, 6], seed)], seed, |_, v| v[0].relu())
}

fn softplus(seed: u64) -> f64 {
    let mut x = random_tensor(&[4, 6], seed);
    x.data_mut()[0] = 25.0;
    x.data_mut()[1] = -25.0;
    check_inputs(&[x], seed, |_, v| v[0].softplus())
}

fn sum_mean(seed: u64) -> f64 {
    let x = random_tensor(&[3, 7], seed);
    check_inputs(&[x], seed, |_, v| v[0].sum()?.mul(v[0].mean()?))
}

fn mse(seed: u64) -> f64 {
    let a = random_tensor(&[5, 1], seed);
    let b = random_tensor(&[5, 1], seed + 100);
    check_inputs(&[a, b], seed, |_, v| v[0].mse(v[1]))
}

fn reshape(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[2, 6], seed)], seed, |_, v| v[0].reshape(&[3, 4]))
}

fn mean_channels(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[2, 3, 4, 5], seed)], seed, |_, v| v[0].mean_channels())
}

fn concat_channels(seed: u64) -> f64 {
    let a = random_tensor(&[2, 1, 3, 3], seed);
    let b = random_tensor(&[2, 3, 3, 3], seed + 100);
    check_inputs(&[a, b], seed, |_, v| Var::concat_channels(&[v[1], v[0], v[1]]))
}

fn concat_narrow_batch(seed: u64) -> f64 {
    let a = random_tensor(&[1, 2, 3, 3], seed);
    let b = random_tensor(&[2, 2, 3, 3], seed + 100);
    check_inputs(&[a, b], seed, |_, v| {
        Var::concat_batch(&[v[0], v[1]])?.narrow_batch(1, 2)
    })
}

fn conv2d(seed: u64) -> f64 {
    let x = random_tensor(&[2, 3, 6, 5], seed);
    let w = random_tensor(&[4, 3, 3, 3], seed + 100);
    let b = random_tensor(&[4], seed + 200);
    check_inputs(&[x, w, b], seed, |_, v| v[0].conv2d(v[1], Some(v[2]), 1, 1))
}

fn conv2d_strided(seed: u64) -> f64 {
    let store = store_with(seed, |s| {
        Conv2d::new("c", 3, 4, 5, 2, 2).register(s, &mut rng(seed)).unwrap()
    });
    let x = random_tensor(&[2, 3, 8, 8], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| {
        Conv2d::new("c", 3, 4, 5, 2, 2).forward(f, v[0])
    })
}

fn conv_transpose2d(seed: u64) -> f64 {
    let layer = ConvTranspose2d::new("d", 3, 2, 5, 2, 2, 1);
    let store = store_with(seed, |s| layer.register(s, &mut rng(seed)).unwrap());
    let x = random_tensor(&[2, 3, 3, 4], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| layer.forward(f, v[0]))
}

fn max_pool2d(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[2, 2, 7, 6], seed)], seed, |_, v| {
        v[0].max_pool2d(3, 2, 1)
    })
}

fn global_max_pool(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[3, 4, 3, 5], seed)], seed, |_, v| {
        v[0].global_max_pool()
    })
}

fn linear(seed: u64) -> f64 {
    let layer = Linear::new("fc", 6, 3);
    let store = store_with(seed, |s| layer.register(s, &mut rng(seed)).unwrap());
    let x = random_tensor(&[4, 6], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| layer.forward(f, v[0]))
}

fn upsample_bilinear(seed: u64) -> f64 {
    check_inputs(&[random_tensor(&[2, 1, 3, 4], seed)], seed, |_, v| {
        v[0].upsample_bilinear(11, 7)
    })
}

fn gdn(seed: u64) -> f64 {
    let layer = Gdn::new("g", 4, false);
    let store = store_with(seed, |s| layer.register(s).unwrap());
    let x = random_tensor(&[2, 4, 3, 3], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| layer.forward(f, v[0]))
}

fn igdn(seed: u64) -> f64 {
    let layer = Gdn::new("g", 4, true);
    let store = store_with(seed, |s| layer.register(s).unwrap());
    let x = random_tensor(&[2, 4, 3, 3], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| layer.forward(f, v[0]))
}

fn batch_norm_train(seed: u64) -> f64 {
    let layer = BatchNorm2d::new("bn", 3);
    let store = store_with(seed, |s| layer.register(s).unwrap());
    let x = random_tensor(&[3, 3, 4, 4], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| layer.forward(f, v[0]))
}

fn batch_norm_eval(seed: u64) -> f64 {
    let layer = BatchNorm2d::new("bn", 3);
    let store = store_with(seed, |s| {
        layer.register(s).unwrap();
        s.set_value("bn.running_mean", random_tensor(&[3], seed + 7)).unwrap();
        s.set_value("bn.running_var", positive_tensor(&[3], seed + 8)).unwrap();
    });
    let x = random_tensor(&[2, 3, 4, 4], seed);
    check_layer(&store, &[x], Mode::Eval, seed, |f, v| layer.forward(f, v[0]))
}

fn residual_block(seed: u64) -> f64 {
    let block = ResidualBlock::new("blk", 3, 3, 1).unwrap();
    let store = store_with(seed, |s| block.register(s, &mut rng(seed)).unwrap());
    let x = random_tensor(&[2, 3, 4, 4], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| block.forward(f, v[0]))
}

fn residual_projection(seed: u64) -> f64 {
    let block = ResidualBlock::new("blk", 2, 4, 2).unwrap();
    let store = store_with(seed, |s| block.register(s, &mut rng(seed)).unwrap());
    let x = random_tensor(&[2, 2, 6, 6], seed);
    check_layer(&store, &[x], Mode::Train, seed, |f, v| block.forward(f, v[0]))
}

fn error_map(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4, 4], seed);
    let b = random_tensor(&[2, 3, 4, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| residual_error_map(v[0], v[1]))
}

fn normalization(seed: u64) -> f64 {
    let el = positive_tensor(&[2, 1, 3, 3], seed);
    let er = positive_tensor(&[2, 1, 3, 3], seed + 100);
    let pl = positive_tensor(&[2, 1, 3, 3], seed + 200);
    let pr = positive_tensor(&[2, 1, 3, 3], seed + 300);
    check_inputs(&[el, er, pl, pr], seed, |_, v| {
        let (a, b) = normalize_likelihoods(v[0], v[1])?;
        let (c, d) = normalize_priors(v[2], v[3])?;
        Var::concat_channels(&[a, b, c, d])
    })
}

fn prior_map(seed: u64) -> f64 {
    let prior = PriorGenerator::new();
    let store = store_with(seed, |s| prior.register(s, &mut rng(seed)).unwrap());
    let features = random_tensor(&[1, 192, 2, 2], seed);
    check_layer(&store, &[features], Mode::Train, seed, |f, v| {
        prior.prior_map(f, v[0], 8, 8)
    })
}

fn fusion(seed: u64) -> f64 {
    let fusion = Fusion::new();
    let store = store_with(seed, |s| fusion.register(s, &mut rng(seed)).unwrap());
    let left = random_tensor(&[2, 3, 4, 4], seed);
    let right = random_tensor(&[2, 3, 4, 4], seed + 100);
    let maps: Vec<_> = (0..4).map(|k| positive_tensor(&[2, 1, 4, 4], seed + 200 + k)).collect();
    let inputs = [
        left,
        right,
        maps[0].clone(),
        maps[1].clone(),
        maps[2].clone(),
        maps[3].clone(),
    ];
    check_layer(&store, &inputs, Mode::Train, seed, |f, v| {
        let bundle = RivalryBundle::from_maps(v[2], v[3], v[4], v[5])?;
        fusion.forward(f, v[0], v[1], &bundle)
    })
}

fn reconstruction_loss(seed: u64) -> f64 {
    let a = random_tensor(&[2, 3, 4, 4], seed);
    let b = random_tensor(&[2, 3, 4, 4], seed + 100);
    check_inputs(&[a, b], seed, |_, v| recon_loss(v[0], v[1]))
}

fn quality_loss(seed: u64) -> f64 {
    let a = random_tensor(&[6, 1], seed);
    let b = random_tensor(&[6, 1], seed + 100);
    check_inputs(&[a, b], seed, |_, v| score_loss(v[0], v[1]))
}
