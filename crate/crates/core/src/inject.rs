//! Stuck-at-channel error injection.
//!
//! The production mechanism rewrites the faulty channels' threshold
//! vectors at run time: to pin a channel to the level of rank `r`,
//! the first `r` thresholds are set below any reachable accumulator
//! and the rest above, so exactly `r` comparisons fire on every input.
//! An independent forced-output evaluator bypasses the MVTU arithmetic
//! entirely and exists to validate that mechanism.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::layer::Layer;
use crate::model::network::{Classifier, ChannelEffect, QuantizedNetwork};
use crate::model::tensor::Tensor;

/// One stuck-at experiment: a set of output channels of one layer, all
/// pinned to the same activation level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub layer: usize,
    /// Ascending, deduplicated output-channel indices.
    pub channels: Vec<u32>,
    pub level: i32,
}

impl FaultSpec {
    pub fn new(layer: usize, channels: impl IntoIterator<Item = u32>, level: i32) -> Self {
        let set: BTreeSet<u32> = channels.into_iter().collect();
        FaultSpec {
            layer,
            channels: set.into_iter().collect(),
            level,
        }
    }

    pub fn single(layer: usize, channel: u32, level: i32) -> Self {
        FaultSpec::new(layer, [channel], level)
    }

    /// Check the fault against a network: injectable layer, channels in
    /// range, legal stuck level.
    pub fn validate(&self, net: &QuantizedNetwork) -> Result<()> {
        let layer = net
            .layers
            .get(self.layer)
            .ok_or_else(|| Error::usage(format!("layer {} out of range", self.layer)))?;
        if !layer.is_thresholded() {
            return Err(Error::usage(format!(
                "layer {} has no threshold activation; faults target conv/fc channels",
                self.layer
            )));
        }
        let out_ch = layer.out_channels().unwrap_or(0);
        if self.channels.is_empty() {
            return Err(Error::usage("fault must name at least one channel"));
        }
        if let Some(&ch) = self.channels.iter().find(|&&ch| ch as usize >= out_ch) {
            return Err(Error::usage(format!(
                "channel {ch} out of range (layer {} has {out_ch})",
                self.layer
            )));
        }
        if net.quant.act_level_rank(self.level).is_none() {
            return Err(Error::usage(format!(
                "{} is not a legal stuck level for {}",
                self.level,
                net.quant.tag()
            )));
        }
        Ok(())
    }

    /// Compact stable key used in checkpoints and result stores, e.g.
    /// `L1:C3,5:S-1`.
    pub fn key(&self) -> String {
        let chans: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!("L{}:C{}:S{}", self.layer, chans.join(","), self.level)
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let bad = || Error::usage(format!("malformed fault key {key:?}"));
        let mut parts = key.split(':');
        let layer = parts
            .next()
            .and_then(|s| s.strip_prefix('L'))
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad)?;
        let channels: Vec<u32> = parts
            .next()
            .and_then(|s| s.strip_prefix('C'))
            .ok_or_else(bad)?
            .split(',')
            .map(|c| c.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let level = parts
            .next()
            .and_then(|s| s.strip_prefix('S'))
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(FaultSpec::new(layer, channels, level))
    }
}

impl std::fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.key())
    }
}

/// A network with a stuck-at fault realized by rewritten thresholds.
/// Only the faulty channels' thresholds differ from the base network;
/// weights are untouched.
#[derive(Debug, Clone)]
pub struct InjectedNetwork {
    base: Arc<QuantizedNetwork>,
    fault: FaultSpec,
    rewritten: BTreeMap<u32, Vec<i32>>,
}

impl InjectedNetwork {
    pub fn base(&self) -> &Arc<QuantizedNetwork> {
        &self.base
    }

    pub fn fault(&self) -> &FaultSpec {
        &self.fault
    }

    pub fn rewritten_thresholds(&self) -> &BTreeMap<u32, Vec<i32>> {
        &self.rewritten
    }

    pub fn infer(&self, image: &Tensor) -> Result<usize> {
        self.base.infer_with(
            image,
            ChannelEffect::Thresholds {
                layer: self.fault.layer,
                map: &self.rewritten,
            },
        )
    }

    /// Feature maps under the injected fault (locality checks).
    pub fn feature_maps(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.base.feature_maps_with(
            image,
            ChannelEffect::Thresholds {
                layer: self.fault.layer,
                map: &self.rewritten,
            },
        )
    }

    /// Clone the base network with the rewritten thresholds baked in.
    pub fn materialize(&self) -> QuantizedNetwork {
        let mut net = (*self.base).clone();
        if let Layer::Conv { thresholds, .. } | Layer::Fc { thresholds, .. } =
            &mut net.layers[self.fault.layer]
        {
            for (&ch, row) in &self.rewritten {
                thresholds[ch as usize] = row.clone();
            }
        }
        net
    }
}

impl Classifier for InjectedNetwork {
    fn classify(&self, image: &Tensor) -> Result<usize> {
        self.infer(image)
    }
}

/// Build the threshold vector that pins a channel to `rank` fired
/// comparisons: `rank` entries below any reachable value, the rest above.
fn stuck_thresholds(n_thresh: usize, rank: usize, th_max: i64) -> Vec<i32> {
    // th_max is bound+1 where bound fits well inside i32 for any model
    // this simulator handles (i8 weights, i32 thresholds at load time).
    let lo = i32::try_from(-th_max).expect("accumulator bound exceeds i32");
    let hi = i32::try_from(th_max).expect("accumulator bound exceeds i32");
    let mut t = vec![hi; n_thresh];
    for slot in t.iter_mut().take(rank) {
        *slot = lo;
    }
    t
}

/// Inject a stuck-at fault by threshold rewriting.
pub fn inject(net: &Arc<QuantizedNetwork>, fault: &FaultSpec) -> Result<InjectedNetwork> {
    fault.validate(net)?;
    let rank = net
        .quant
        .act_level_rank(fault.level)
        .expect("validated level");
    let th_max = net.accumulator_bound(fault.layer)?.th_max();
    let n_thresh = net.quant.thresholds_per_channel();
    let row = stuck_thresholds(n_thresh, rank, th_max);
    let rewritten = fault
        .channels
        .iter()
        .map(|&ch| (ch, row.clone()))
        .collect();
    Ok(InjectedNetwork {
        base: Arc::clone(net),
        fault: fault.clone(),
        rewritten,
    })
}

/// Oracle evaluator: writes the stuck level straight into the faulty
/// channels' output pixels, bypassing MVTU arithmetic.
#[derive(Debug, Clone)]
pub struct ForcedNetwork {
    base: Arc<QuantizedNetwork>,
    fault: FaultSpec,
    channels: BTreeSet<u32>,
}

impl ForcedNetwork {
    pub fn fault(&self) -> &FaultSpec {
        &self.fault
    }

    pub fn infer(&self, image: &Tensor) -> Result<usize> {
        self.base.infer_with(
            image,
            ChannelEffect::Force {
                layer: self.fault.layer,
                channels: &self.channels,
                level: self.fault.level,
            },
        )
    }

    /// Feature maps under the forced fault (locality checks).
    pub fn feature_maps(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.base.feature_maps_with(
            image,
            ChannelEffect::Force {
                layer: self.fault.layer,
                channels: &self.channels,
                level: self.fault.level,
            },
        )
    }
}

impl Classifier for ForcedNetwork {
    fn classify(&self, image: &Tensor) -> Result<usize> {
        self.infer(image)
    }
}

/// Build the forced-output oracle for a fault.
pub fn force_channel(net: &Arc<QuantizedNetwork>, fault: &FaultSpec) -> Result<ForcedNetwork> {
    fault.validate(net)?;
    Ok(ForcedNetwork {
        base: Arc::clone(net),
        channels: fault.channels.iter().copied().collect(),
        fault: fault.clone(),
    })
}

/// Image-by-image comparison of the two injection mechanisms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub fault: FaultSpec,
    pub images: usize,
    /// `(image index, injected class, forced class)` for each disagreement.
    pub mismatches: Vec<(usize, usize, usize)>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Run both mechanisms over a dataset and report any classification
/// disagreements.
pub fn verify_injection_equivalence(
    net: &Arc<QuantizedNetwork>,
    fault: &FaultSpec,
    dataset: &LabeledDataset,
) -> Result<EquivalenceReport> {
    let injected = inject(net, fault)?;
    let forced = force_channel(net, fault)?;
    let mut mismatches = Vec::new();
    for (i, (image, _)) in dataset.iter().enumerate() {
        let a = injected.infer(image)?;
        let b = forced.infer(image)?;
        if a != b {
            mismatches.push((i, a, b));
        }
    }
    Ok(EquivalenceReport {
        fault: fault.clone(),
        images: dataset.len(),
        mismatches,
    })
}
