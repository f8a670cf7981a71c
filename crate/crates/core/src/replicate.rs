//! Selective channel triplication: criticality analysis over campaign
//! results, overhead accounting in MAC operations, functional TMR
//! evaluation and the cost/error Pareto frontier.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::campaign::{CampaignMode, CampaignResult};
use crate::error::{Error, Result};
use crate::inject::{inject, FaultSpec, InjectedNetwork};
use crate::model::layer::Layer;
use crate::model::network::{Classifier, QuantizedNetwork};
use crate::model::quant::QuantSpec;
use crate::model::tensor::Tensor;

/// Multiply-accumulate counts per conv/fc layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpsProfile {
    /// `(layer index, total MACs, output channels)` for conv/fc layers.
    pub per_layer: Vec<(usize, u64, usize)>,
}

impl OpsProfile {
    /// Count MACs from layer geometry: conv is
    /// `out_h*out_w*k^2*in_ch*out_ch`, fc is `in_n*out_n`.
    pub fn of_network(net: &QuantizedNetwork) -> Result<OpsProfile> {
        let mut per_layer = Vec::new();
        let mut shape = net.input_shape;
        for (i, layer) in net.layers.iter().enumerate() {
            let out_shape = layer.out_shape(shape)?;
            match layer {
                Layer::Conv { params, .. } => {
                    let macs = (out_shape.h * out_shape.w * params.fan_in() * params.out_ch) as u64;
                    per_layer.push((i, macs, params.out_ch));
                }
                Layer::Fc { in_n, out_n, .. } => {
                    per_layer.push((i, (*in_n * *out_n) as u64, *out_n));
                }
                Layer::Maxpool => {}
            }
            shape = out_shape;
        }
        Ok(OpsProfile { per_layer })
    }

    pub fn total(&self) -> u64 {
        self.per_layer.iter().map(|&(_, macs, _)| macs).sum()
    }

    /// MACs attributable to one channel of `layer` (layer ops divide
    /// evenly over output channels).
    pub fn per_channel(&self, layer: usize) -> Result<u64> {
        self.per_layer
            .iter()
            .find(|&&(l, _, _)| l == layer)
            .map(|&(_, macs, out_ch)| macs / out_ch as u64)
            .ok_or_else(|| Error::usage(format!("layer {layer} has no MACs")))
    }
}

fn require_whole_channel(result: &CampaignResult) -> Result<()> {
    if result.plan.mode != CampaignMode::WholeChannel {
        return Err(Error::usage(
            "criticality analysis needs a whole-channel campaign",
        ));
    }
    if !result.complete {
        return Err(Error::usage(
            "campaign incomplete: criticality needs every channel and level",
        ));
    }
    Ok(())
}

/// Channels whose worst single-fault accuracy drop exceeds `t`
/// percentage points, per layer. The worst injected level counts.
pub fn critical_channels(
    result: &CampaignResult,
    t: f64,
) -> Result<BTreeMap<usize, BTreeSet<u32>>> {
    require_whole_channel(result)?;
    let baseline = result.baseline_accuracy_percent();
    // worst level per (layer, channel)
    let mut worst: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    for (fault, &correct) in &result.results {
        let key = (fault.layer, fault.channels[0]);
        worst
            .entry(key)
            .and_modify(|w| *w = (*w).min(correct))
            .or_insert(correct);
    }
    let mut critical: BTreeMap<usize, BTreeSet<u32>> =
        result.plan.layers.iter().map(|&(l, _)| (l, BTreeSet::new())).collect();
    for ((layer, channel), correct) in worst {
        let drop = baseline - result.accuracy_percent(correct);
        if drop > t {
            critical.entry(layer).or_default().insert(channel);
        }
    }
    Ok(critical)
}

/// Which channels get TMR and what that costs in operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    /// Tolerated worst-case accuracy drop, percentage points.
    pub drop_threshold: f64,
    /// Triplicated channels per layer.
    pub channels: BTreeMap<usize, BTreeSet<u32>>,
    /// `200 * ops(triplicated) / ops(total)`.
    pub ops_overhead_percent: f64,
}

impl ReplicationPlan {
    pub fn triplicated_count(&self) -> usize {
        self.channels.values().map(|s| s.len()).sum()
    }

    pub fn is_protected(&self, layer: usize, channel: u32) -> bool {
        self.channels
            .get(&layer)
            .is_some_and(|set| set.contains(&channel))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Extra MACs a plan spends, relative to the unprotected network.
fn replicated_macs(ops: &OpsProfile, channels: &BTreeMap<usize, BTreeSet<u32>>) -> Result<u64> {
    let mut macs = 0u64;
    for (&layer, set) in channels {
        macs += ops.per_channel(layer)? * set.len() as u64;
    }
    Ok(macs)
}

/// Plan TMR for every channel whose worst-case drop exceeds `t`.
pub fn plan_replication(
    result: &CampaignResult,
    t: f64,
    ops: &OpsProfile,
) -> Result<ReplicationPlan> {
    let channels = critical_channels(result, t)?;
    let overhead = 200.0 * replicated_macs(ops, &channels)? as f64 / ops.total() as f64;
    Ok(ReplicationPlan {
        drop_threshold: t,
        channels,
        ops_overhead_percent: overhead,
    })
}

/// Full TMR over every conv/fc channel, head included: the 200%
/// overhead reference point.
pub fn plan_full_tmr(ops: &OpsProfile) -> Result<ReplicationPlan> {
    let channels: BTreeMap<usize, BTreeSet<u32>> = ops
        .per_layer
        .iter()
        .map(|&(l, _, out_ch)| (l, (0..out_ch as u32).collect()))
        .collect();
    let overhead = 200.0 * replicated_macs(ops, &channels)? as f64 / ops.total() as f64;
    Ok(ReplicationPlan {
        drop_threshold: 0.0,
        channels,
        ops_overhead_percent: overhead,
    })
}

/// A network with TMR applied to the planned channels. Modeled
/// functionally: a single fault touching a triplicated channel is
/// outvoted (2 of 3 replicas are clean), so only the fault's
/// unprotected channels reach the arithmetic.
#[derive(Debug, Clone)]
pub struct ProtectedNetwork {
    base: Arc<QuantizedNetwork>,
    plan: ReplicationPlan,
}

/// Evaluator for one fault against a protected network.
pub enum ProtectedEval {
    Clean(Arc<QuantizedNetwork>),
    Faulty(InjectedNetwork),
}

impl Classifier for ProtectedEval {
    fn classify(&self, image: &Tensor) -> Result<usize> {
        match self {
            ProtectedEval::Clean(net) => net.infer(image),
            ProtectedEval::Faulty(injected) => injected.infer(image),
        }
    }
}

impl ProtectedNetwork {
    pub fn base(&self) -> &Arc<QuantizedNetwork> {
        &self.base
    }

    pub fn plan(&self) -> &ReplicationPlan {
        &self.plan
    }

    /// The part of a fault that voting cannot mask; `None` when every
    /// named channel is triplicated.
    pub fn residual_fault(&self, fault: &FaultSpec) -> Option<FaultSpec> {
        let remaining: Vec<u32> = fault
            .channels
            .iter()
            .copied()
            .filter(|&ch| !self.plan.is_protected(fault.layer, ch))
            .collect();
        if remaining.is_empty() {
            None
        } else {
            Some(FaultSpec::new(fault.layer, remaining, fault.level))
        }
    }

    /// Build the evaluator seen under one injected fault.
    pub fn evaluator_for(&self, fault: &FaultSpec) -> Result<ProtectedEval> {
        fault.validate(&self.base)?;
        match self.residual_fault(fault) {
            None => Ok(ProtectedEval::Clean(Arc::clone(&self.base))),
            Some(residual) => Ok(ProtectedEval::Faulty(inject(&self.base, &residual)?)),
        }
    }
}

/// Apply a replication plan to a network.
pub fn apply_replication(
    net: &Arc<QuantizedNetwork>,
    plan: &ReplicationPlan,
) -> Result<ProtectedNetwork> {
    for (&layer, set) in &plan.channels {
        let l = net
            .layers
            .get(layer)
            .ok_or_else(|| Error::usage(format!("plan names layer {layer}, network has fewer")))?;
        let out_ch = match l.out_channels() {
            Some(c) => c as u32,
            None if set.is_empty() => continue,
            None => {
                return Err(Error::usage(format!(
                    "plan triplicates channels of maxpool layer {layer}"
                )))
            }
        };
        if let Some(&ch) = set.iter().find(|&&ch| ch >= out_ch) {
            return Err(Error::usage(format!(
                "plan triplicates channel {ch} of layer {layer}, which has only {out_ch}"
            )));
        }
    }
    Ok(ProtectedNetwork {
        base: Arc::clone(net),
        plan: plan.clone(),
    })
}

/// Worst-case correct count of a protected network under any single
/// whole-channel fault, derived from the unprotected campaign.
pub fn post_replication_worst_case(
    result: &CampaignResult,
    plan: &ReplicationPlan,
) -> Result<u32> {
    require_whole_channel(result)?;
    let mut worst = result.baseline_correct;
    for (fault, &correct) in &result.results {
        if !plan.is_protected(fault.layer, fault.channels[0]) {
            worst = worst.min(correct);
        }
    }
    Ok(worst)
}

/// One protected design: precision, worst-case error, hardware cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub label: String,
    pub weight_bits: u8,
    pub act_bits: u8,
    pub hardware_cost: f64,
    pub worst_error_percent: f64,
}

/// LUT-proxy hardware cost: MACs of the protected network (replicated
/// channels counted three times) scaled by `1.6 * w * a` per MAC.
pub fn hardware_cost(ops: &OpsProfile, plan: &ReplicationPlan, quant: QuantSpec) -> Result<f64> {
    let macs = ops.total() + 2 * replicated_macs(ops, &plan.channels)?;
    Ok(macs as f64 * 1.6 * quant.weight_bits() as f64 * quant.act_bits() as f64)
}

/// Non-dominated subset (minimizing both cost and error), sorted by
/// cost. A point survives unless some other point is at least as good
/// on both axes and strictly better on one.
pub fn pareto_frontier(points: &[CostPoint]) -> Result<Vec<CostPoint>> {
    if points.is_empty() {
        return Err(Error::usage("pareto frontier of an empty set"));
    }
    let mut sorted: Vec<&CostPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.hardware_cost
            .total_cmp(&b.hardware_cost)
            .then(a.worst_error_percent.total_cmp(&b.worst_error_percent))
            .then(a.label.cmp(&b.label))
    });
    let mut frontier: Vec<CostPoint> = Vec::new();
    let mut best_error = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        // one cost group at a time
        let cost = sorted[i].hardware_cost;
        let mut j = i;
        while j < sorted.len() && sorted[j].hardware_cost == cost {
            j += 1;
        }
        let group_min = sorted[i].worst_error_percent; // group sorted by error
        if group_min < best_error {
            for p in &sorted[i..j] {
                if p.worst_error_percent == group_min {
                    frontier.push((*p).clone());
                }
            }
            best_error = group_min;
        }
        i = j;
    }
    Ok(frontier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{plan_whole_channel, run_campaign, RunOptions};
    use crate::dataset::LabeledDataset;
    use crate::model::evaluate;
    use crate::model::quant::InputEncoding;
    use crate::model::tensor::Shape;

    /// Two-channel net where classification depends only on channel 0
    /// of the hidden layer; channel 1 is dead weight.
    fn fragile_net() -> Arc<QuantizedNetwork> {
        let net = QuantizedNetwork {
            name: "fragile".into(),
            quant: QuantSpec::new(1, 1).unwrap(),
            input_shape: Shape::flat(2),
            input_encoding: InputEncoding::new(1).unwrap(),
            layers: vec![
                Layer::Fc {
                    in_n: 2,
                    out_n: 2,
                    weights: vec![vec![1, -1], vec![-1, 1]],
                    thresholds: vec![vec![0], vec![0]],
                },
                Layer::Fc {
                    in_n: 2,
                    out_n: 2,
                    weights: vec![vec![1, 1], vec![-1, 1]],
                    thresholds: vec![],
                },
            ],
        };
        net.validate().unwrap();
        Arc::new(net)
    }

    fn all_inputs_dataset(net: &QuantizedNetwork) -> LabeledDataset {
        let images: Vec<Tensor> = [[-1, -1], [-1, 1], [1, -1], [1, 1]]
            .iter()
            .map(|v| Tensor::new(Shape::flat(2), v.to_vec()).unwrap())
            .collect();
        let labels = images
            .iter()
            .map(|img| net.infer(img).unwrap() as u16)
            .collect();
        LabeledDataset::new(images, labels).unwrap()
    }

    fn fragile_campaign() -> (Arc<QuantizedNetwork>, LabeledDataset, CampaignResult) {
        let net = fragile_net();
        let ds = all_inputs_dataset(&net);
        let plan = plan_whole_channel(&net, &[-1, 1], None).unwrap();
        let result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        (net, ds, result)
    }

    #[test]
    fn engineered_fragile_channel_is_the_only_critical_one() {
        let (_, _, result) = fragile_campaign();
        let critical = critical_channels(&result, 10.0).unwrap();
        assert_eq!(critical[&0], BTreeSet::from([0]));
    }

    #[test]
    fn huge_threshold_yields_empty_sets() {
        let (_, _, result) = fragile_campaign();
        let critical = critical_channels(&result, 100.0).unwrap();
        assert!(critical.values().all(|s| s.is_empty()));
    }

    #[test]
    fn overhead_bounds() {
        let (net, _, result) = fragile_campaign();
        let ops = OpsProfile::of_network(&net).unwrap();

        // no critical channels -> 0%
        let none = plan_replication(&result, 100.0, &ops).unwrap();
        assert_eq!(none.ops_overhead_percent, 0.0);

        // triplicating everything costs exactly 200%
        let full = plan_full_tmr(&ops).unwrap();
        assert_eq!(full.ops_overhead_percent, 200.0);

        // any proper subset stays strictly below
        let partial = plan_replication(&result, 10.0, &ops).unwrap();
        assert!(partial.triplicated_count() > 0);
        assert!(partial.ops_overhead_percent > 0.0);
        assert!(partial.ops_overhead_percent < 200.0);
    }

    #[test]
    fn overhead_monotone_in_threshold() {
        let (net, _, result) = fragile_campaign();
        let ops = OpsProfile::of_network(&net).unwrap();
        let strict = plan_replication(&result, 1.0, &ops).unwrap();
        let loose = plan_replication(&result, 30.0, &ops).unwrap();
        assert!(strict.ops_overhead_percent >= loose.ops_overhead_percent);
    }

    #[test]
    fn masked_fault_restores_baseline() {
        let (net, ds, result) = fragile_campaign();
        let ops = OpsProfile::of_network(&net).unwrap();
        let plan = plan_replication(&result, 10.0, &ops).unwrap();
        let protected = apply_replication(&net, &plan).unwrap();

        let fault = FaultSpec::single(0, 0, 1);
        let eval = protected.evaluator_for(&fault).unwrap();
        let masked = evaluate(&eval, &ds).unwrap();
        assert_eq!(masked.correct, result.baseline_correct);

        // unprotected channel behaves exactly as in the campaign
        let fault1 = FaultSpec::single(0, 1, 1);
        let eval1 = protected.evaluator_for(&fault1).unwrap();
        let raw = evaluate(&eval1, &ds).unwrap();
        assert_eq!(raw.correct, result.results[&fault1]);
    }

    #[test]
    fn residual_fault_strips_protected_channels() {
        let (net, _, result) = fragile_campaign();
        let ops = OpsProfile::of_network(&net).unwrap();
        let plan = plan_replication(&result, 10.0, &ops).unwrap();
        let protected = apply_replication(&net, &plan).unwrap();
        let multi = FaultSpec::new(0, [0u32, 1], 1);
        let residual = protected.residual_fault(&multi).unwrap();
        assert_eq!(residual.channels, vec![1]);
        assert_eq!(protected.residual_fault(&FaultSpec::single(0, 0, 1)), None);
    }

    #[test]
    fn plan_json_round_trips() {
        let (net, _, result) = fragile_campaign();
        let ops = OpsProfile::of_network(&net).unwrap();
        let plan = plan_replication(&result, 10.0, &ops).unwrap();
        let back = ReplicationPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(plan, back);
    }

    #[test]
    fn frontier_single_and_incomparable_points() {
        let p = |label: &str, cost: f64, err: f64| CostPoint {
            label: label.into(),
            weight_bits: 1,
            act_bits: 1,
            hardware_cost: cost,
            worst_error_percent: err,
        };
        let single = pareto_frontier(&[p("a", 1.0, 5.0)]).unwrap();
        assert_eq!(single.len(), 1);

        let both = pareto_frontier(&[p("a", 1.0, 5.0), p("b", 2.0, 3.0)]).unwrap();
        assert_eq!(both.len(), 2);

        let dominated = pareto_frontier(&[p("a", 1.0, 5.0), p("b", 2.0, 6.0)]).unwrap();
        assert_eq!(dominated.len(), 1);
        assert_eq!(dominated[0].label, "a");

        assert!(pareto_frontier(&[]).is_err());
    }

    #[test]
    fn frontier_keeps_exact_duplicates() {
        let p = |label: &str, cost: f64, err: f64| CostPoint {
            label: label.into(),
            weight_bits: 1,
            act_bits: 1,
            hardware_cost: cost,
            worst_error_percent: err,
        };
        let f = pareto_frontier(&[p("a", 1.0, 5.0), p("b", 1.0, 5.0)]).unwrap();
        assert_eq!(f.len(), 2, "duplicates do not dominate each other");
    }
}
