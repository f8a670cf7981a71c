//! Bit-accurate simulator for quantized-neural-network dataflow
//! accelerators with permanent-fault injection.
//!
//! The crate models FINN-style inference (integer matrix-vector products
//! followed by multi-threshold activation), injects stuck-at-channel
//! errors by rewriting thresholds at run time, and provides two
//! robustness optimizers on top of the injection results:
//!
//! * selective channel triplication under a MAC-proportional hardware
//!   cost model, including Pareto-frontier construction, and
//! * exact fault-aware scheduling of channels onto processing elements
//!   (max-min bottleneck assignment).
//!
//! Everything in the forward path is integer arithmetic, so results are
//! bit-exact and independent of thread count.

pub mod campaign;
pub mod dataset;
pub mod error;
pub mod inject;
pub mod io;
pub mod model;
pub mod replicate;
pub mod scheduling;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use model::{
    evaluate, Classifier, Evaluation, InputEncoding, QuantSpec, QuantizedNetwork, Shape, Tensor,
};
