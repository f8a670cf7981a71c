//! Deterministic synthetic models and datasets for desk-scale runs.
//!
//! Generated networks stand in for trained models: weights are drawn
//! uniformly from the legal level set and thresholds are strictly
//! ascending integers centered on the accumulator's typical range, so
//! activations actually toggle. The same seed and spec always produce a
//! bit-identical network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::io::RawDataset;
use crate::model::layer::{ConvParams, Layer};
use crate::model::network::QuantizedNetwork;
use crate::model::quant::{InputEncoding, QuantSpec};
use crate::model::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyLayer {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
        out_ch: usize,
    },
    Maxpool,
    Fc {
        out_n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub name: String,
    pub seed: u64,
    pub quant: QuantSpec,
    pub input_shape: Shape,
    pub input_bits: u8,
    /// Layer stack; the last entry must be `Fc` and becomes the raw-score
    /// classifier head.
    pub layers: Vec<TopologyLayer>,
    /// Thresholds are sampled within `+-scale*sqrt(bound)` (clamped to
    /// the accumulator bound) so they straddle typical dot products.
    pub threshold_scale: f64,
}

fn sample_weight(rng: &mut ChaCha20Rng, quant: QuantSpec) -> i8 {
    if quant.weight_bits() == 1 {
        if rng.gen::<bool>() {
            1
        } else {
            -1
        }
    } else {
        let m = quant.weight_level_max();
        rng.gen_range(-m..=m) as i8
    }
}

fn sample_thresholds(
    rng: &mut ChaCha20Rng,
    n_thresh: usize,
    bound: i64,
    scale: f64,
) -> Vec<i32> {
    let spread = (scale * (bound as f64).sqrt()).ceil() as i64;
    // wide enough for n distinct integers, never beyond the bound unless
    // the bound itself is too tight to hold them
    let r = spread.clamp(1, bound).max(n_thresh as i64) as i32;
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n_thresh {
        set.insert(rng.gen_range(-r..=r));
    }
    set.into_iter().collect()
}

/// Deterministically generate a network from a spec.
pub fn generate_synthetic(spec: &SyntheticModelSpec) -> Result<QuantizedNetwork> {
    if spec.layers.is_empty() {
        return Err(Error::usage("synthetic spec needs at least one layer"));
    }
    if !matches!(spec.layers.last(), Some(TopologyLayer::Fc { .. })) {
        return Err(Error::usage("synthetic topology must end in an fc head"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let encoding = InputEncoding::new(spec.input_bits)?;
    let n_thresh = spec.quant.thresholds_per_channel();
    let head = spec.layers.len() - 1;

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut shape = spec.input_shape;
    let mut in_level_max = encoding.level_max();
    for (i, topo) in spec.layers.iter().enumerate() {
        let layer = match *topo {
            TopologyLayer::Maxpool => Layer::Maxpool,
            TopologyLayer::Conv {
                kernel,
                stride,
                pad,
                out_ch,
            } => {
                let params = ConvParams {
                    kernel,
                    stride,
                    pad,
                    in_ch: shape.c,
                    out_ch,
                };
                let fan_in = params.fan_in();
                let weights = (0..out_ch)
                    .map(|_| (0..fan_in).map(|_| sample_weight(&mut rng, spec.quant)).collect())
                    .collect();
                let bound =
                    spec.quant.weight_level_max() as i64 * in_level_max as i64 * fan_in as i64;
                let thresholds = (0..out_ch)
                    .map(|_| sample_thresholds(&mut rng, n_thresh, bound, spec.threshold_scale))
                    .collect();
                Layer::Conv {
                    params,
                    weights,
                    thresholds,
                }
            }
            TopologyLayer::Fc { out_n } => {
                let in_n = shape.len();
                let weights = (0..out_n)
                    .map(|_| (0..in_n).map(|_| sample_weight(&mut rng, spec.quant)).collect())
                    .collect();
                let thresholds = if i == head {
                    vec![]
                } else {
                    let bound =
                        spec.quant.weight_level_max() as i64 * in_level_max as i64 * in_n as i64;
                    (0..out_n)
                        .map(|_| sample_thresholds(&mut rng, n_thresh, bound, spec.threshold_scale))
                        .collect()
                };
                Layer::Fc {
                    in_n,
                    out_n,
                    weights,
                    thresholds,
                }
            }
        };
        shape = layer.out_shape(shape)?;
        if layer.is_thresholded() {
            in_level_max = spec.quant.act_level_max();
        }
        layers.push(layer);
    }

    let net = QuantizedNetwork {
        name: spec.name.clone(),
        quant: spec.quant,
        input_shape: spec.input_shape,
        input_encoding: encoding,
        layers,
    };
    net.validate()?;
    Ok(net)
}

/// Generate, probing classifications on random images and bumping the
/// seed until the network is non-degenerate (produces at least two
/// distinct classes).
pub fn generate_nondegenerate(
    spec: &SyntheticModelSpec,
    probe_images: usize,
) -> Result<QuantizedNetwork> {
    let mut candidate = spec.clone();
    for _ in 0..64 {
        let net = generate_synthetic(&candidate)?;
        let probe = random_raw_dataset(candidate.seed ^ 0x5eed, &net, probe_images)?;
        let ds = probe.quantize(net.input_encoding)?;
        let mut seen = std::collections::BTreeSet::new();
        for (image, _) in ds.iter() {
            seen.insert(net.infer(image)?);
            if seen.len() > 1 {
                return Ok(net);
            }
        }
        candidate.seed = candidate.seed.wrapping_add(1);
    }
    Err(Error::usage(format!(
        "no non-degenerate network within 64 seeds of {}",
        spec.seed
    )))
}

/// How synthetic dataset labels are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetLabels {
    /// Label every image with the clean network's own classification
    /// (baseline accuracy 100%, so injected drops are visible).
    Model,
    /// Uniform random labels over the network's classes.
    Random,
}

/// Random raw images shaped for `net`, unlabeled (all labels 0).
pub fn random_raw_dataset(
    seed: u64,
    net: &QuantizedNetwork,
    count: usize,
) -> Result<RawDataset> {
    if count == 0 {
        return Err(Error::usage("dataset size must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shape = net.input_shape;
    let images = (0..count)
        .map(|_| (0..shape.len()).map(|_| rng.gen::<i8>()).collect())
        .collect();
    Ok(RawDataset {
        height: shape.h,
        width: shape.w,
        channels: shape.c,
        images,
        labels: vec![0; count],
    })
}

/// Random raw dataset with labels assigned per `labels`.
pub fn synthesize_dataset(
    seed: u64,
    net: &QuantizedNetwork,
    count: usize,
    labels: DatasetLabels,
) -> Result<RawDataset> {
    let mut raw = random_raw_dataset(seed, net, count)?;
    match labels {
        DatasetLabels::Model => {
            let quantized = raw.quantize(net.input_encoding)?;
            let labeled: Result<Vec<u16>> = quantized
                .images()
                .iter()
                .map(|img| net.infer(img).map(|c| c as u16))
                .collect();
            raw.labels = labeled?;
        }
        DatasetLabels::Random => {
            let classes = net.class_count() as u16;
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1abe1);
            raw.labels = (0..count).map(|_| rng.gen_range(0..classes)).collect();
        }
    }
    Ok(raw)
}

/// Convenience: synthesize and quantize in one step.
pub fn synthesize_labeled(
    seed: u64,
    net: &QuantizedNetwork,
    count: usize,
    labels: DatasetLabels,
) -> Result<LabeledDataset> {
    synthesize_dataset(seed, net, count, labels)?.quantize(net.input_encoding)
}
