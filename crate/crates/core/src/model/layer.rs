//! Network layers: integer convolution / fully connected with
//! multi-threshold activation, plus 2x2 max pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::quant::QuantSpec;
use crate::model::tensor::Shape;

/// Geometry of a convolution layer. Weights for output channel `co` are
/// laid out input-channel major: `weights[co][ic*k*k + ky*k + kx]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvParams {
    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_ch
    }

    pub fn out_dim(&self, in_dim: usize) -> Result<usize> {
        let padded = in_dim + 2 * self.pad;
        if padded < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "kernel {} larger than padded input {}",
                self.kernel, padded
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv {
        params: ConvParams,
        /// `[out_ch][in_ch * k * k]` integer weight levels.
        weights: Vec<Vec<i8>>,
        /// `[out_ch][n_thresh]` strictly ascending; empty on the classifier head.
        thresholds: Vec<Vec<i32>>,
    },
    Fc {
        in_n: usize,
        out_n: usize,
        /// `[out_n][in_n]` integer weight levels.
        weights: Vec<Vec<i8>>,
        thresholds: Vec<Vec<i32>>,
    },
    /// 2x2 max pooling with stride 2 over each channel plane.
    Maxpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Fc,
    Maxpool,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::Fc { .. } => LayerKind::Fc,
            Layer::Maxpool => LayerKind::Maxpool,
        }
    }

    /// Output channels of a conv/fc layer; None for maxpool.
    pub fn out_channels(&self) -> Option<usize> {
        match self {
            Layer::Conv { params, .. } => Some(params.out_ch),
            Layer::Fc { out_n, .. } => Some(*out_n),
            Layer::Maxpool => None,
        }
    }

    /// Dot-product width seen by each output channel.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Conv { params, .. } => Some(params.fan_in()),
            Layer::Fc { in_n, .. } => Some(*in_n),
            Layer::Maxpool => None,
        }
    }

    pub fn thresholds(&self) -> Option<&Vec<Vec<i32>>> {
        match self {
            Layer::Conv { thresholds, .. } | Layer::Fc { thresholds, .. } => Some(thresholds),
            Layer::Maxpool => None,
        }
    }

    /// True when the layer applies threshold activation (conv/fc with a
    /// non-empty threshold table); only such layers can host faults.
    pub fn is_thresholded(&self) -> bool {
        self.thresholds().map_or(false, |t| !t.is_empty())
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv { params, .. } => {
                if input.c != params.in_ch {
                    return Err(Error::ShapeMismatch(format!(
                        "conv expects {} input channels, got {}",
                        params.in_ch, input.c
                    )));
                }
                Ok(Shape::new(
                    params.out_dim(input.h)?,
                    params.out_dim(input.w)?,
                    params.out_ch,
                ))
            }
            Layer::Fc { in_n, out_n, .. } => {
                if input.len() != *in_n {
                    return Err(Error::ShapeMismatch(format!(
                        "fc expects {} inputs, got {} ({})",
                        in_n,
                        input.len(),
                        input
                    )));
                }
                Ok(Shape::flat(*out_n))
            }
            Layer::Maxpool => {
                if input.h % 2 != 0 || input.w % 2 != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool needs even spatial dims, got {input}"
                    )));
                }
                Ok(Shape::new(input.h / 2, input.w / 2, input.c))
            }
        }
    }

    /// Largest |accumulator| any admissible input can produce, given the
    /// largest |level| of this layer's inputs.
    pub fn accumulator_bound(&self, quant: QuantSpec, in_level_max: i32) -> Result<i64> {
        let fan_in = self
            .fan_in()
            .ok_or_else(|| Error::usage("maxpool layers have no accumulator"))?;
        Ok(quant.weight_level_max() as i64 * in_level_max as i64 * fan_in as i64)
    }

    /// Integer dot product of one output channel's weights with a
    /// flattened input window, followed by threshold counting. This is
    /// the core compute of the matrix-vector threshold unit.
    pub fn mvtu_channel(&self, quant: QuantSpec, window: &[i32], channel: usize) -> Result<i32> {
        let (weights, thresholds) = match self {
            Layer::Conv {
                weights, thresholds, ..
            }
            | Layer::Fc {
                weights, thresholds, ..
            } => (weights, thresholds),
            Layer::Maxpool => return Err(Error::usage("maxpool has no MVTU channel")),
        };
        if channel >= weights.len() {
            return Err(Error::usage(format!(
                "channel {channel} out of range (layer has {})",
                weights.len()
            )));
        }
        if window.len() != weights[channel].len() {
            return Err(Error::ShapeMismatch(format!(
                "window length {} does not match fan-in {}",
                window.len(),
                weights[channel].len()
            )));
        }
        let val = dot(&weights[channel], window);
        Ok(activate(quant, &thresholds[channel], val))
    }

    /// Validate weights and thresholds against the quant spec.
    /// `is_head` marks the final classifier layer, which emits raw
    /// accumulator scores and must carry no thresholds.
    pub fn validate(&self, quant: QuantSpec, is_head: bool) -> Result<()> {
        let (weights, thresholds, fan_in, out_ch, what) = match self {
            Layer::Conv {
                params,
                weights,
                thresholds,
            } => {
                if params.kernel == 0 || params.stride == 0 {
                    return Err(Error::model("conv kernel and stride must be positive"));
                }
                (weights, thresholds, params.fan_in(), params.out_ch, "conv")
            }
            Layer::Fc {
                in_n,
                out_n,
                weights,
                thresholds,
            } => (weights, thresholds, *in_n, *out_n, "fc"),
            Layer::Maxpool => {
                if is_head {
                    return Err(Error::model("final layer must be fc, got maxpool"));
                }
                return Ok(());
            }
        };
        if out_ch == 0 || fan_in == 0 {
            return Err(Error::model(format!("{what} layer has zero dimension")));
        }
        if weights.len() != out_ch {
            return Err(Error::model(format!(
                "{what} has {} weight rows, expected {out_ch}",
                weights.len()
            )));
        }
        for (ch, row) in weights.iter().enumerate() {
            if row.len() != fan_in {
                return Err(Error::model(format!(
                    "{what} channel {ch}: {} weights, expected {fan_in}",
                    row.len()
                )));
            }
            if let Some(w) = row.iter().find(|&&w| !quant.is_weight_level(w as i32)) {
                return Err(Error::model(format!(
                    "{what} channel {ch}: weight {w} is not a legal W{} level",
                    quant.weight_bits()
                )));
            }
        }
        if is_head {
            if !thresholds.is_empty() {
                return Err(Error::model(
                    "classifier head must not carry thresholds (raw scores)",
                ));
            }
            return Ok(());
        }
        if thresholds.len() != out_ch {
            return Err(Error::model(format!(
                "{what} has {} threshold rows, expected {out_ch}",
                thresholds.len()
            )));
        }
        let want = quant.thresholds_per_channel();
        for (ch, row) in thresholds.iter().enumerate() {
            if row.len() != want {
                return Err(Error::model(format!(
                    "{what} channel {ch}: {} thresholds, expected {want}",
                    row.len()
                )));
            }
            if let Some(pair) = row.windows(2).find(|p| p[0] >= p[1]) {
                return Err(Error::model(format!(
                    "{what} channel {ch}: thresholds not strictly ascending ({} >= {})",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(weights: &[i8], window: &[i32]) -> i64 {
    debug_assert_eq!(weights.len(), window.len());
    weights
        .iter()
        .zip(window)
        .map(|(&w, &x)| w as i64 * x as i64)
        .sum()
}

/// Count strictly exceeded thresholds and map the count to a level.
#[inline]
pub(crate) fn activate(quant: QuantSpec, thresholds: &[i32], val: i64) -> i32 {
    let fired = thresholds.iter().filter(|&&t| val > t as i64).count();
    quant.level_for_count(fired)
}
