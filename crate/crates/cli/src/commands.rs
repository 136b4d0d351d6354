use std::fs;
use std::path::{Path, PathBuf};

use padnet_core::image::{ImageTensor, StereoSample};
use padnet_core::io::{
    self, export_map, load_image, load_weights, save_weights, DatasetManifest, MapScaling, SynthConfig,
};
use padnet_core::metrics::EvalReport;
use padnet_core::model::{PadNet, ParamGroup};
use padnet_core::pipeline::{self, PatchGrid, Profile, TrainConfig, TrainReport};
use padnet_core::regressor::BackboneKind;
use padnet_core::{Error, ParamStore, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Cli, Command, GridArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Prints the effective settings as one `# config` JSON line.
fn echo_config<T: Serialize>(command: &str, seed: u64, profile: Profile, settings: &T) {
    let value = serde_json::json!({
        "command": command,
        "seed": seed,
        "profile": profile,
        "settings": settings,
    });
    println!("# config {value}");
}

fn train_config(cli_seed: u64, profile: Profile, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(profile);
    cfg.seed = cli_seed;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    cfg.steps_per_epoch = args.steps_per_epoch;
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = args.stride_w {
        cfg.stride_w = s;
    }
    if let Some(s) = args.stride_h {
        cfg.stride_h = s;
    }
    cfg.augment.crop = !args.no_crop;
    cfg.augment.hflip = !args.no_hflip;
    cfg.augment.vflip = !args.no_vflip;
    cfg.backbone = args.backbone.parse()?;
    Ok(cfg)
}

fn finish_training(report: &TrainReport, store: &ParamStore<f32>, args: &TrainArgs) -> Result<()> {
    save_weights(store, &args.out)?;
    if let Some(path) = &args.trace {
        fs::write(path, report.to_json_lines()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    println!(
        "steps = {}\ninitial_loss = {:.6e}\nfinal_loss = {:.6e}\nweights = {}",
        report.trace.len(),
        report.initial_loss().unwrap_or(f64::NAN),
        report.final_loss().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn image_dir(dir: &Path) -> Result<Vec<ImageTensor>> {
    let io_err = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm" || x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no .ppm/.pgm images in {}", dir.display())));
    }
    paths.iter().map(load_image).collect()
}

fn model_and_store(backbone: &str, seed: u64) -> Result<(PadNet, ParamStore<f32>)> {
    let net = PadNet::new(backbone.parse::<BackboneKind>()?);
    let store = net.init_store(&mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((net, store))
}

fn grid_strides(profile: Profile, grid: &GridArgs) -> (usize, usize) {
    let (h, w) = profile.strides();
    (grid.stride_h.unwrap_or(h), grid.stride_w.unwrap_or(w))
}

fn trained_model(grid: &GridArgs) -> Result<(PadNet, ParamStore<f32>)> {
    let (net, mut store) = model_and_store(&grid.backbone, 0)?;
    load_weights(&mut store, &grid.weights, None)?;
    Ok((net, store))
}

fn load_pair(left: &Path, right: &Path) -> Result<StereoSample> {
    StereoSample::new(load_image(left)?, load_image(right)?, f64::NAN)
}

fn reference_pairs(dir: &Path) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    let io_err = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut lefts: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with("_left.ppm"))
        })
        .collect();
    lefts.sort();
    if lefts.is_empty() {
        return Err(usage(format!("no NAME_left.ppm references in {}", dir.display())));
    }
    lefts
        .iter()
        .map(|l| {
            let name = l
                .file_name()
                .expect("file")
                .to_string_lossy()
                .replace("_left.ppm", "_right.ppm");
            let r = l.with_file_name(name);
            Ok((load_image(l)?, load_image(&r)?))
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let profile: Profile = cli.profile.parse()?;
    let seed = cli.seed;
    match cli.command {
        Command::PretrainAe {
            manifest,
            images,
            lr,
            train,
        } => {
            let mut cfg = train_config(seed, profile, &train)?;
            cfg.rates.pretrain = lr;
            echo_config("pretrain-ae", seed, profile, &cfg);
            let imgs = match (manifest, images) {
                (Some(m), _) => DatasetManifest::load(m)?.load_all_images()?,
                (None, Some(dir)) => image_dir(&dir)?,
                (None, None) => return Err(usage("pass --manifest or --images")),
            };
            let (net, mut store) = model_and_store(&train.backbone, seed)?;
            let report = pipeline::pretrain_autoencoder(&net, &mut store, &imgs, &cfg)?;
            finish_training(&report, &store, &train)
        }
        Command::Pretrain2d {
            manifest,
            init,
            lr,
            train,
        } => {
            let mut cfg = train_config(seed, profile, &train)?;
            cfg.rates.pretrain = lr;
            echo_config("pretrain-2d", seed, profile, &cfg);
            let data = DatasetManifest::load(manifest)?.load_scored_images()?;
            let (net, mut store) = model_and_store(&train.backbone, seed)?;
            if let Some(path) = init {
                let container = io::WeightsContainer::load(path)?;
                let present: Vec<&str> = ParamGroup::ALL
                    .iter()
                    .flat_map(|g| g.prefixes().iter().copied())
                    .filter(|p| container.names().any(|n| n.starts_with(p)))
                    .collect();
                container.apply_to(&mut store, Some(&present))?;
            }
            let report = pipeline::pretrain_regressor_2d(&net, &mut store, &data, &cfg)?;
            finish_training(&report, &store, &train)
        }
        Command::TrainJoint {
            manifest,
            ae_weights,
            reg_weights,
            allow_random,
            alpha1,
            alpha3,
            split,
            train,
        } => {
            let mut cfg = train_config(seed, profile, &train)?;
            cfg.rates.alpha1 = alpha1;
            cfg.rates.alpha3 = alpha3;
            cfg.train_fraction = split;
            echo_config("train-joint", seed, profile, &cfg);
            if !allow_random && (ae_weights.is_none() || reg_weights.is_none()) {
                return Err(usage(
                    "joint training needs --ae-weights and --reg-weights (or --allow-random)",
                ));
            }
            let data = DatasetManifest::load(manifest)?.load_stereo_samples()?;
            let (net, mut store) = model_and_store(&train.backbone, seed)?;
            if let Some(p) = ae_weights {
                load_weights(&mut store, p, Some(ParamGroup::Autoencoder.prefixes()))?;
            }
            if let Some(p) = reg_weights {
                load_weights(&mut store, p, Some(ParamGroup::Regressor.prefixes()))?;
            }
            let report = pipeline::train_joint(&net, &mut store, &data, &cfg)?;
            if !report.test_indices.is_empty() {
                let held_out: Vec<StereoSample> = report.test_indices.iter().map(|&i| data[i].clone()).collect();
                let pred = pipeline::predict_many(&net, &store, &held_out, cfg.patch(), cfg.stride_h, cfg.stride_w)?;
                let subj: Vec<f64> = held_out.iter().map(|s| s.score).collect();
                match EvalReport::compute(&pred, &subj, None) {
                    Ok(r) => print!("# held-out\n{}", r.to_text()),
                    Err(e) => println!("# held-out statistics unavailable: {e}"),
                }
            }
            finish_training(&report, &store, &train)
        }
        Command::Predict { grid, left, right } => {
            let (stride_h, stride_w) = grid_strides(profile, &grid);
            echo_config(
                "predict",
                seed,
                profile,
                &serde_json::json!({"stride_h": stride_h, "stride_w": stride_w, "weights": grid.weights}),
            );
            let (net, store) = trained_model(&grid)?;
            let sample = load_pair(&left, &right)?;
            let patches = PatchGrid::new(sample.height(), sample.width(), profile.patch(), stride_h, stride_w)?;
            let score = pipeline::predict_quality(&net, &store, &sample, &patches)?;
            println!("{score}");
            Ok(())
        }
        Command::Evaluate {
            grid,
            manifest,
            krasula,
        } => {
            let (stride_h, stride_w) = grid_strides(profile, &grid);
            echo_config(
                "evaluate",
                seed,
                profile,
                &serde_json::json!({"stride_h": stride_h, "stride_w": stride_w, "weights": grid.weights, "krasula": krasula}),
            );
            let (net, store) = trained_model(&grid)?;
            let samples = DatasetManifest::load(manifest)?.load_stereo_samples()?;
            let pred = pipeline::predict_many(&net, &store, &samples, profile.patch(), stride_h, stride_w)?;
            let subj: Vec<f64> = samples.iter().map(|s| s.score).collect();
            let observers: Option<Vec<Vec<f64>>> = if krasula {
                Some(
                    samples
                        .iter()
                        .map(|s| s.observers.clone())
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| usage("--krasula needs observer scores on every row"))?,
                )
            } else {
                None
            };
            let report = EvalReport::compute(&pred, &subj, observers.as_deref())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::ExportMaps {
            weights,
            left,
            right,
            out,
            mode,
            backbone,
        } => {
            let scaling: MapScaling = mode.parse()?;
            echo_config(
                "export-maps",
                seed,
                profile,
                &serde_json::json!({"weights": weights, "out": out, "mode": scaling}),
            );
            let (net, mut store) = model_and_store(&backbone, 0)?;
            load_weights(&mut store, &weights, None)?;
            let maps = pipeline::rivalry_maps(&net, &store, &load_pair(&left, &right)?)?;
            for (name, map) in maps.named() {
                let s = if name.contains("_norm_") {
                    scaling
                } else {
                    MapScaling::MinMax
                };
                let path = out.join(format!("{name}.pgm"));
                export_map(map, &path, s)?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::SynthData {
            refs,
            procedural,
            size,
            out,
            max_asymmetric,
            observers,
        } => {
            let config = SynthConfig {
                max_asymmetric,
                observers,
                ..SynthConfig::default()
            };
            echo_config("synth-data", seed, profile, &config);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let references = match (refs, procedural) {
                (Some(dir), _) => reference_pairs(&dir)?,
                (None, Some(n)) if n > 0 && size > 0 => (0..n)
                    .map(|_| io::procedural_reference(size, size, 3, &mut rng))
                    .collect(),
                _ => return Err(usage("pass --refs DIR or --procedural N (N, size > 0)")),
            };
            let pairs = io::synthesize_distortions(&references, &config, &mut rng)?;
            let manifest = io::write_dataset(&pairs, &out)?;
            println!(
                "pairs = {}\nmanifest = {}",
                manifest.records.len(),
                out.join("manifest.csv").display()
            );
            Ok(())
        }
    }
}
