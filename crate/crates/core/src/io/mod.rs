//! Image codecs, dataset manifests, synthetic distortions, map export and
//! the weights container.

mod export;
mod manifest;
mod pnm;
mod synth;
mod weights;

pub use export::{export_map, quantize_map, MapScaling};
pub use manifest::{DatasetManifest, ManifestRecord, RecordKind, HEADER};
pub use pnm::{decode_pnm, encode_pgm, encode_ppm, load_image, save_image};
pub use synth::{
    add_noise, distort, gaussian_blur, procedural_reference, pseudo_mos, synthesize_distortions, write_dataset,
    Distortion, SynthConfig, SynthPair, BLUR_SIGMAS, MAX_LEVEL, NOISE_SIGMAS,
};
pub use weights::{load_weights, save_weights, StoredTensor, WeightsContainer, MAGIC, VERSION};
