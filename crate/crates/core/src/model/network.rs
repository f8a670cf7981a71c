//! Network container, bit-accurate forward pass and dataset evaluation.
//!
//! The forward pass is pure integer arithmetic: per-channel dot products
//! accumulated in i64, then threshold counting. The final layer is a
//! classifier head that emits raw accumulator scores; classification is
//! the argmax over those scores (lowest index wins ties).

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::layer::{activate, dot, Layer};
use crate::model::quant::{InputEncoding, QuantSpec};
use crate::model::tensor::{Shape, Tensor};

/// Largest |accumulator| reachable on a layer, and the matching
/// unreachable threshold value used for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumulatorBound {
    pub layer: usize,
    pub bound: i64,
}

impl AccumulatorBound {
    /// A threshold strictly bigger than any accumulator can reach.
    pub fn th_max(&self) -> i64 {
        self.bound + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedNetwork {
    pub name: String,
    pub quant: QuantSpec,
    pub input_shape: Shape,
    pub input_encoding: InputEncoding,
    pub layers: Vec<Layer>,
}

/// Per-layer channel override applied during a forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ChannelEffect<'a> {
    /// Fault-free evaluation.
    Clean,
    /// Replace the threshold vectors of selected channels (stuck-at via
    /// threshold rewriting).
    Thresholds {
        layer: usize,
        map: &'a BTreeMap<u32, Vec<i32>>,
    },
    /// Skip the MVTU entirely and write `level` into every output pixel
    /// of the selected channels.
    Force {
        layer: usize,
        channels: &'a BTreeSet<u32>,
        level: i32,
    },
}

impl QuantizedNetwork {
    /// Enforce every structural invariant; no invalid network should
    /// exist past this point.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::model("network has no layers"));
        }
        let last = self.layers.len() - 1;
        match &self.layers[last] {
            Layer::Fc { .. } => {}
            other => {
                return Err(Error::model(format!(
                    "final layer must be fc (classifier head), got {:?}",
                    other.kind()
                )))
            }
        }
        let mut shape = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate(self.quant, i == last)
                .map_err(|e| Error::model(format!("layer {i}: {e}")))?;
            if i != last && layer.kind() != crate::model::layer::LayerKind::Maxpool
                && !layer.is_thresholded()
            {
                return Err(Error::model(format!(
                    "layer {i}: only the final layer may omit thresholds"
                )));
            }
            shape = layer
                .out_shape(shape)
                .map_err(|e| Error::model(format!("layer {i}: {e}")))?;
        }
        Ok(())
    }

    /// Number of classes = output width of the head.
    pub fn class_count(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Fc { out_n, .. }) => *out_n,
            _ => 0,
        }
    }

    /// Indices of layers that can host stuck-at faults: conv/fc layers
    /// with threshold activation (the head and maxpools cannot).
    pub fn injectable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_thresholded())
            .map(|(i, _)| i)
            .collect()
    }

    /// Shape of the feature map entering `layer`.
    pub fn in_shape_of(&self, layer: usize) -> Result<Shape> {
        let mut shape = self.input_shape;
        for l in &self.layers[..layer] {
            shape = l.out_shape(shape)?;
        }
        Ok(shape)
    }

    /// Largest |input level| seen by `layer`: the input encoding for
    /// layer 0, activation levels after any thresholded layer.
    fn in_level_max_of(&self, layer: usize) -> i32 {
        let mut level = self.input_encoding.level_max();
        for l in &self.layers[..layer] {
            if l.is_thresholded() {
                level = self.quant.act_level_max();
            }
        }
        level
    }

    pub fn accumulator_bound(&self, layer: usize) -> Result<AccumulatorBound> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::usage(format!("layer {layer} out of range")))?;
        let bound = l.accumulator_bound(self.quant, self.in_level_max_of(layer))?;
        Ok(AccumulatorBound { layer, bound })
    }

    /// Raw classifier scores (the head's accumulators).
    pub fn scores(&self, image: &Tensor) -> Result<Vec<i64>> {
        self.scores_with(image, ChannelEffect::Clean)
    }

    /// Classify one image: argmax of head scores, lowest index on ties.
    pub fn infer(&self, image: &Tensor) -> Result<usize> {
        self.infer_with(image, ChannelEffect::Clean)
    }

    /// Every intermediate feature map in layer order, excluding the
    /// classifier head (whose output is the score vector). Used for
    /// diagnostics and fault-locality checks.
    pub fn feature_maps(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.feature_maps_with(image, ChannelEffect::Clean)
    }

    pub(crate) fn feature_maps_with(
        &self,
        image: &Tensor,
        effect: ChannelEffect,
    ) -> Result<Vec<Tensor>> {
        self.check_input(image)?;
        let last = self.layers.len() - 1;
        let mut maps = Vec::with_capacity(last);
        let mut current = image.clone();
        for (i, layer) in self.layers.iter().enumerate().take(last) {
            current = eval_layer(self.quant, layer, &current, false, i, effect)?;
            maps.push(current.clone());
        }
        Ok(maps)
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "image shape {} does not match network input {}",
                image.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    pub(crate) fn scores_with(&self, image: &Tensor, effect: ChannelEffect) -> Result<Vec<i64>> {
        self.check_input(image)?;
        let last = self.layers.len() - 1;
        let mut current = image.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                return head_scores(layer, &current);
            }
            current = eval_layer(self.quant, layer, &current, false, i, effect)?;
        }
        unreachable!("validated networks always end in an fc head")
    }

    pub(crate) fn infer_with(&self, image: &Tensor, effect: ChannelEffect) -> Result<usize> {
        Ok(argmax(&self.scores_with(image, effect)?))
    }

    /// Content hash over precision, shapes, weights and thresholds;
    /// identifies a network in campaign plans and checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.quant.tag().as_bytes());
        h.update([self.input_encoding.bits()]);
        for d in [self.input_shape.h, self.input_shape.w, self.input_shape.c] {
            h.update((d as u64).to_le_bytes());
        }
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    params,
                    weights,
                    thresholds,
                } => {
                    h.update(b"conv");
                    for d in [params.kernel, params.stride, params.pad, params.in_ch, params.out_ch]
                    {
                        h.update((d as u64).to_le_bytes());
                    }
                    hash_rows(&mut h, weights, thresholds);
                }
                Layer::Fc {
                    in_n,
                    out_n,
                    weights,
                    thresholds,
                } => {
                    h.update(b"fc");
                    h.update((*in_n as u64).to_le_bytes());
                    h.update((*out_n as u64).to_le_bytes());
                    hash_rows(&mut h, weights, thresholds);
                }
                Layer::Maxpool => h.update(b"pool"),
            }
        }
        to_hex(&h.finalize())
    }
}

fn hash_rows(h: &mut Sha256, weights: &[Vec<i8>], thresholds: &[Vec<i32>]) {
    for row in weights {
        for &w in row {
            h.update(w.to_le_bytes());
        }
    }
    for row in thresholds {
        for &t in row {
            h.update(t.to_le_bytes());
        }
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Argmax with lowest-index tie-break.
pub fn argmax(scores: &[i64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn head_scores(layer: &Layer, input: &Tensor) -> Result<Vec<i64>> {
    match layer {
        Layer::Fc { in_n, weights, .. } => {
            if input.as_slice().len() != *in_n {
                return Err(Error::ShapeMismatch(format!(
                    "head expects {in_n} inputs, got {}",
                    input.as_slice().len()
                )));
            }
            Ok(weights.iter().map(|row| dot(row, input.as_slice())).collect())
        }
        _ => Err(Error::model("classifier head must be fc")),
    }
}

fn eval_layer(
    quant: QuantSpec,
    layer: &Layer,
    input: &Tensor,
    is_head: bool,
    layer_idx: usize,
    effect: ChannelEffect,
) -> Result<Tensor> {
    debug_assert!(!is_head);
    let out_shape = layer.out_shape(input.shape())?;
    match layer {
        Layer::Maxpool => Ok(maxpool(input, out_shape)),
        Layer::Conv {
            params,
            weights,
            thresholds,
        } => {
            let mut out = Tensor::filled(out_shape, 0);
            let mut window = vec![0i32; params.fan_in()];
            for co in 0..params.out_ch {
                if let Some(level) = forced_level(effect, layer_idx, co) {
                    out.channel_plane_mut(co).fill(level);
                    continue;
                }
                let th = override_thresholds(effect, layer_idx, co).unwrap_or(&thresholds[co]);
                let w = &weights[co];
                for oy in 0..out_shape.h {
                    for ox in 0..out_shape.w {
                        fill_window(input, params, oy, ox, &mut window);
                        let val = dot(w, &window);
                        out.set(co, oy, ox, activate(quant, th, val));
                    }
                }
            }
            Ok(out)
        }
        Layer::Fc {
            out_n,
            weights,
            thresholds,
            ..
        } => {
            let flat = input.as_slice();
            let mut data = Vec::with_capacity(*out_n);
            for co in 0..*out_n {
                if let Some(level) = forced_level(effect, layer_idx, co) {
                    data.push(level);
                    continue;
                }
                let th = override_thresholds(effect, layer_idx, co).unwrap_or(&thresholds[co]);
                let val = dot(&weights[co], flat);
                data.push(activate(quant, th, val));
            }
            Tensor::new(out_shape, data)
        }
    }
}

#[inline]
fn forced_level(effect: ChannelEffect, layer: usize, channel: usize) -> Option<i32> {
    match effect {
        ChannelEffect::Force {
            layer: l,
            channels,
            level,
        } if l == layer && channels.contains(&(channel as u32)) => Some(level),
        _ => None,
    }
}

#[inline]
fn override_thresholds<'a>(
    effect: ChannelEffect<'a>,
    layer: usize,
    channel: usize,
) -> Option<&'a Vec<i32>> {
    match effect {
        ChannelEffect::Thresholds { layer: l, map } if l == layer => map.get(&(channel as u32)),
        _ => None,
    }
}

/// Gather one conv window (zero padding) input-channel major.
#[inline]
fn fill_window(
    input: &Tensor,
    params: &crate::model::layer::ConvParams,
    oy: usize,
    ox: usize,
    window: &mut [i32],
) {
    let shape = input.shape();
    let k = params.kernel;
    let mut idx = 0;
    for ic in 0..params.in_ch {
        for ky in 0..k {
            let iy = (oy * params.stride + ky) as isize - params.pad as isize;
            for kx in 0..k {
                let ix = (ox * params.stride + kx) as isize - params.pad as isize;
                window[idx] = if iy >= 0 && ix >= 0 && (iy as usize) < shape.h && (ix as usize) < shape.w
                {
                    input.get(ic, iy as usize, ix as usize)
                } else {
                    0
                };
                idx += 1;
            }
        }
    }
}

fn maxpool(input: &Tensor, out_shape: Shape) -> Tensor {
    let mut out = Tensor::filled(out_shape, 0);
    for c in 0..out_shape.c {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let m = input
                    .get(c, 2 * oy, 2 * ox)
                    .max(input.get(c, 2 * oy, 2 * ox + 1))
                    .max(input.get(c, 2 * oy + 1, 2 * ox))
                    .max(input.get(c, 2 * oy + 1, 2 * ox + 1));
                out.set(c, oy, ox, m);
            }
        }
    }
    out
}

/// Anything that classifies an image; networks, injected variants and
/// protected evaluators all implement it. Implementations must be pure
/// so datasets can be evaluated from any number of threads.
pub trait Classifier: Sync {
    fn classify(&self, image: &Tensor) -> Result<usize>;
}

impl Classifier for QuantizedNetwork {
    fn classify(&self, image: &Tensor) -> Result<usize> {
        self.infer(image)
    }
}

/// Exact correct-classification count over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub correct: u32,
    pub total: u32,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn accuracy_percent(&self) -> f64 {
        100.0 * self.accuracy()
    }
}

/// Count correct classifications in parallel. The count is a sum of
/// independent 0/1 terms, so the result does not depend on worker count
/// or evaluation order.
pub fn evaluate<C: Classifier>(classifier: &C, dataset: &LabeledDataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::usage("cannot evaluate an empty dataset"));
    }
    let correct = dataset
        .images()
        .par_iter()
        .zip(dataset.labels().par_iter())
        .map(|(image, &label)| {
            classifier
                .classify(image)
                .map(|c| (c == label as usize) as u32)
        })
        .try_reduce(|| 0u32, |a, b| Ok(a + b))?;
    Ok(Evaluation {
        correct,
        total: dataset.len() as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layer::ConvParams;

    fn one_hot_net() -> QuantizedNetwork {
        // fc head only: identity-like weights on 4 inputs -> 4 classes
        let weights: Vec<Vec<i8>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1 } else { -1 }).collect())
            .collect();
        QuantizedNetwork {
            name: "one-hot".into(),
            quant: QuantSpec::new(1, 1).unwrap(),
            input_shape: Shape::flat(4),
            input_encoding: InputEncoding::new(1).unwrap(),
            layers: vec![Layer::Fc {
                in_n: 4,
                out_n: 4,
                weights,
                thresholds: vec![],
            }],
        }
    }

    #[test]
    fn dominant_input_wins() {
        let net = one_hot_net();
        net.validate().unwrap();
        let image = Tensor::new(Shape::flat(4), vec![-1, -1, 1, -1]).unwrap();
        assert_eq!(net.infer(&image).unwrap(), 2);
    }

    #[test]
    fn inference_is_deterministic() {
        let net = one_hot_net();
        let image = Tensor::new(Shape::flat(4), vec![1, -1, 1, -1]).unwrap();
        let first = net.infer(&image).unwrap();
        for _ in 0..10 {
            assert_eq!(net.infer(&image).unwrap(), first);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[3, 7, 7, 1]), 1);
        assert_eq!(argmax(&[5]), 0);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = one_hot_net();
        let image = Tensor::new(Shape::flat(3), vec![1, -1, 1]).unwrap();
        assert!(net.infer(&image).is_err());
    }

    #[test]
    fn maxpool_takes_integer_max() {
        let input = Tensor::new(
            Shape::new(2, 2, 2),
            vec![1, -1, 0, 1, /* ch1 */ -3, -1, -2, -1],
        )
        .unwrap();
        let out = maxpool(&input, Shape::new(1, 1, 2));
        assert_eq!(out.as_slice(), &[1, -1]);
    }

    #[test]
    fn conv_padding_contributes_zero() {
        let q = QuantSpec::new(2, 2).unwrap();
        let params = ConvParams {
            kernel: 3,
            stride: 1,
            pad: 1,
            in_ch: 1,
            out_ch: 1,
        };
        let layer = Layer::Conv {
            params,
            weights: vec![vec![1; 9]],
            thresholds: vec![vec![-100, 100]],
        };
        let input = Tensor::filled(Shape::new(2, 2, 1), 1);
        let out = eval_layer(q, &layer, &input, false, 0, ChannelEffect::Clean).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 2, 1));
        // every window sums the four real pixels only
        assert_eq!(out.as_slice(), &[0, 0, 0, 0]);
    }

    #[test]
    fn in_level_max_tracks_first_layer_encoding() {
        let mut net = one_hot_net();
        net.input_encoding = InputEncoding::new(8).unwrap();
        assert_eq!(net.in_level_max_of(0), 127);
        let bound = net.accumulator_bound(0).unwrap();
        assert_eq!(bound.bound, 127 * 4);
        assert_eq!(bound.th_max(), 127 * 4 + 1);
    }
}
