//! Bit-accurate model core: quantization, tensors, layers, forward pass
//! and channel-to-PE schedules.

pub mod layer;
pub mod network;
pub mod quant;
pub mod schedule;
pub mod tensor;

pub use layer::{ConvParams, Layer, LayerKind};
pub use network::{
    argmax, evaluate, AccumulatorBound, Classifier, Evaluation, QuantizedNetwork,
};
pub use quant::{InputEncoding, QuantSpec};
pub use schedule::{default_schedule, Schedule};
pub use tensor::{Shape, Tensor};
