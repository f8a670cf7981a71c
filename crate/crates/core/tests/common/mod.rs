//! Shared test fixtures: an independent scalar reference implementation
//! of the forward pass, and synthetic network builders.

#![allow(dead_code)]

use qfisim::io::synthetic::{
    generate_nondegenerate, synthesize_labeled, DatasetLabels, SyntheticModelSpec, TopologyLayer,
};
use qfisim::model::{Layer, QuantSpec, QuantizedNetwork, Shape, Tensor};
use qfisim::LabeledDataset;
use std::sync::Arc;

/// Naive scalar re-implementation of inference, written independently of
/// the production path: plain nested loops, its own window arithmetic,
/// its own counting and argmax. Used as the brute-force oracle.
pub mod naive {
    use super::*;

    fn count_level(levels: &[i32], thresholds: &[i32], val: i64) -> i32 {
        let mut fired = 0usize;
        for &t in thresholds {
            if val > t as i64 {
                fired += 1;
            }
        }
        levels[fired]
    }

    /// Returns (per-layer maps, head scores).
    pub fn forward(net: &QuantizedNetwork, image: &Tensor) -> (Vec<Vec<i32>>, Vec<i64>) {
        let levels = net.quant.act_levels();
        let mut maps: Vec<Vec<i32>> = Vec::new();
        // current map as (h, w, c) with HWC indexing, unlike production CHW
        let mut cur: Vec<i32> = {
            let s = image.shape();
            let mut v = vec![0; s.len()];
            for y in 0..s.h {
                for x in 0..s.w {
                    for c in 0..s.c {
                        v[(y * s.w + x) * s.c + c] = image.get(c, y, x);
                    }
                }
            }
            v
        };
        let mut h = image.shape().h;
        let mut w = image.shape().w;
        let mut ch = image.shape().c;
        let last = net.layers.len() - 1;

        for (li, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Maxpool => {
                    let (oh, ow) = (h / 2, w / 2);
                    let mut next = vec![0; oh * ow * ch];
                    for y in 0..oh {
                        for x in 0..ow {
                            for c in 0..ch {
                                let mut m = i32::MIN;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let v =
                                            cur[((2 * y + dy) * w + 2 * x + dx) * ch + c];
                                        if v > m {
                                            m = v;
                                        }
                                    }
                                }
                                next[(y * ow + x) * ch + c] = m;
                            }
                        }
                    }
                    cur = next;
                    h = oh;
                    w = ow;
                    maps.push(cur.clone());
                }
                Layer::Conv {
                    params,
                    weights,
                    thresholds,
                } => {
                    let k = params.kernel;
                    let oh = (h + 2 * params.pad - k) / params.stride + 1;
                    let ow = (w + 2 * params.pad - k) / params.stride + 1;
                    let mut next = vec![0; oh * ow * params.out_ch];
                    for y in 0..oh {
                        for x in 0..ow {
                            for co in 0..params.out_ch {
                                let mut acc: i64 = 0;
                                for ci in 0..params.in_ch {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iy = (y * params.stride + ky) as i64
                                                - params.pad as i64;
                                            let ix = (x * params.stride + kx) as i64
                                                - params.pad as i64;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= h as i64
                                                || ix >= w as i64
                                            {
                                                continue;
                                            }
                                            let pixel =
                                                cur[(iy as usize * w + ix as usize) * ch + ci];
                                            let weight =
                                                weights[co][ci * k * k + ky * k + kx] as i64;
                                            acc += weight * pixel as i64;
                                        }
                                    }
                                }
                                next[(y * ow + x) * params.out_ch + co] =
                                    count_level(&levels, &thresholds[co], acc);
                            }
                        }
                    }
                    cur = next;
                    h = oh;
                    w = ow;
                    ch = params.out_ch;
                    maps.push(cur.clone());
                }
                Layer::Fc {
                    in_n,
                    out_n,
                    weights,
                    thresholds,
                } => {
                    // flatten HWC -> the production layout is CHW, so
                    // reorder to match the weight indexing convention
                    let mut flat = vec![0; *in_n];
                    for y in 0..h {
                        for x in 0..w {
                            for c in 0..ch {
                                flat[c * (h * w) + y * w + x] = cur[(y * w + x) * ch + c];
                            }
                        }
                    }
                    if li == last {
                        let mut scores = vec![0i64; *out_n];
                        for (o, score) in scores.iter_mut().enumerate() {
                            for i in 0..*in_n {
                                *score += weights[o][i] as i64 * flat[i] as i64;
                            }
                        }
                        return (maps, scores);
                    }
                    let mut next = vec![0; *out_n];
                    for (o, slot) in next.iter_mut().enumerate() {
                        let mut acc: i64 = 0;
                        for i in 0..*in_n {
                            acc += weights[o][i] as i64 * flat[i] as i64;
                        }
                        *slot = count_level(&levels, &thresholds[o], acc);
                    }
                    cur = next;
                    h = 1;
                    w = 1;
                    ch = *out_n;
                    maps.push(cur.clone());
                }
            }
        }
        unreachable!("network ends in an fc head");
    }

    pub fn infer(net: &QuantizedNetwork, image: &Tensor) -> usize {
        let (_, scores) = forward(net, image);
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Small mixed-topology synthetic network at the given precision.
pub fn small_net(weight_bits: u8, act_bits: u8, seed: u64) -> Arc<QuantizedNetwork> {
    let spec = SyntheticModelSpec {
        name: format!("test-w{weight_bits}a{act_bits}"),
        seed,
        quant: QuantSpec::new(weight_bits, act_bits).unwrap(),
        input_shape: Shape::new(6, 6, 2),
        input_bits: 8,
        layers: vec![
            TopologyLayer::Conv {
                kernel: 3,
                stride: 1,
                pad: 0,
                out_ch: 4,
            },
            TopologyLayer::Maxpool,
            TopologyLayer::Fc { out_n: 6 },
            TopologyLayer::Fc { out_n: 4 },
        ],
        threshold_scale: 2.5,
    };
    Arc::new(generate_nondegenerate(&spec, 64).unwrap())
}

/// Desk-scale network: 5 layers, up to 32 channels per layer.
pub fn desk_net(weight_bits: u8, act_bits: u8, seed: u64) -> Arc<QuantizedNetwork> {
    let spec = SyntheticModelSpec {
        name: format!("desk-w{weight_bits}a{act_bits}"),
        seed,
        quant: QuantSpec::new(weight_bits, act_bits).unwrap(),
        input_shape: Shape::new(10, 10, 3),
        input_bits: 8,
        layers: vec![
            TopologyLayer::Conv {
                kernel: 3,
                stride: 1,
                pad: 0,
                out_ch: 8,
            },
            TopologyLayer::Maxpool,
            TopologyLayer::Conv {
                kernel: 3,
                stride: 1,
                pad: 0,
                out_ch: 16,
            },
            TopologyLayer::Fc { out_n: 32 },
            TopologyLayer::Fc { out_n: 10 },
        ],
        threshold_scale: 2.5,
    };
    Arc::new(generate_nondegenerate(&spec, 64).unwrap())
}

pub fn model_labeled(net: &QuantizedNetwork, seed: u64, count: usize) -> LabeledDataset {
    synthesize_labeled(seed, net, count, DatasetLabels::Model).unwrap()
}
