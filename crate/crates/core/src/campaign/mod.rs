//! Injection campaigns: plan enumeration, parallel resumable execution,
//! summaries and pairwise accuracy matrices.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::inject::{inject, FaultSpec};
use crate::model::network::{evaluate, to_hex, QuantizedNetwork};
use crate::replicate::ProtectedNetwork;

use checkpoint::{CheckpointHeader, CheckpointWriter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CampaignMode {
    /// One experiment per (layer, channel, level): the generic-model
    /// whole-channel sweep.
    WholeChannel,
    /// Every f-subset of one layer's channels stuck together (a single
    /// faulty PE at folding factor f).
    PeCombinations { layer: usize, folding: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub mode: CampaignMode,
    /// Stuck levels to inject, ascending.
    pub levels: Vec<i32>,
    /// Covered `(layer, out_channels)` pairs.
    pub layers: Vec<(usize, usize)>,
    pub net_fingerprint: String,
}

fn validate_levels(net: &QuantizedNetwork, levels: &[i32]) -> Result<Vec<i32>> {
    if levels.is_empty() {
        return Err(Error::usage("campaign needs at least one stuck level"));
    }
    for &l in levels {
        if net.quant.act_level_rank(l).is_none() {
            return Err(Error::usage(format!(
                "{l} is not a legal stuck level for {}",
                net.quant.tag()
            )));
        }
    }
    Ok(levels.iter().copied().sorted().dedup().collect())
}

/// Plan a whole-channel sweep over every injectable layer (optionally
/// filtered), at the given stuck levels.
pub fn plan_whole_channel(
    net: &QuantizedNetwork,
    levels: &[i32],
    layer_filter: Option<&[usize]>,
) -> Result<CampaignPlan> {
    let levels = validate_levels(net, levels)?;
    let injectable = net.injectable_layers();
    let selected: Vec<usize> = match layer_filter {
        None => injectable.clone(),
        Some(filter) => {
            for l in filter {
                if !injectable.contains(l) {
                    return Err(Error::usage(format!("layer {l} is not injectable")));
                }
            }
            filter.iter().copied().sorted().dedup().collect()
        }
    };
    if selected.is_empty() {
        return Err(Error::usage("no injectable layers selected"));
    }
    let layers = selected
        .iter()
        .map(|&l| (l, net.layers[l].out_channels().expect("injectable")))
        .collect();
    Ok(CampaignPlan {
        mode: CampaignMode::WholeChannel,
        levels,
        layers,
        net_fingerprint: net.fingerprint(),
    })
}

/// Plan the combination sweep for one layer at folding factor `f`:
/// every f-subset of channels, stuck at every level.
pub fn plan_pe_combinations(
    net: &QuantizedNetwork,
    layer: usize,
    folding: usize,
    levels: &[i32],
) -> Result<CampaignPlan> {
    let levels = validate_levels(net, levels)?;
    if !net.injectable_layers().contains(&layer) {
        return Err(Error::usage(format!("layer {layer} is not injectable")));
    }
    let out_ch = net.layers[layer].out_channels().expect("injectable");
    if folding < 2 {
        return Err(Error::usage(
            "folding factor must be at least 2 (single channels are the whole-channel mode)",
        ));
    }
    if folding > out_ch {
        return Err(Error::usage(format!(
            "folding factor {folding} exceeds {out_ch} channels"
        )));
    }
    Ok(CampaignPlan {
        mode: CampaignMode::PeCombinations { layer, folding },
        levels,
        layers: vec![(layer, out_ch)],
        net_fingerprint: net.fingerprint(),
    })
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

impl CampaignPlan {
    /// Closed-form planned experiment count (baseline excluded).
    pub fn experiment_count(&self) -> u128 {
        match self.mode {
            CampaignMode::WholeChannel => {
                let channels: u128 = self.layers.iter().map(|&(_, c)| c as u128).sum();
                channels * self.levels.len() as u128
            }
            CampaignMode::PeCombinations { folding, .. } => {
                let (_, c) = self.layers[0];
                binomial(c as u64, folding as u64) * self.levels.len() as u128
            }
        }
    }

    /// Lazy lexicographic experiment enumeration.
    pub fn experiments(&self) -> Box<dyn Iterator<Item = FaultSpec> + '_> {
        match self.mode {
            CampaignMode::WholeChannel => Box::new(self.layers.iter().flat_map(move |&(l, c)| {
                (0..c as u32).flat_map(move |ch| {
                    self.levels.iter().map(move |&lv| FaultSpec::single(l, ch, lv))
                })
            })),
            CampaignMode::PeCombinations { layer, folding } => {
                let (_, c) = self.layers[0];
                Box::new(self.levels.iter().flat_map(move |&lv| {
                    (0..c as u32)
                        .combinations(folding)
                        .map(move |combo| FaultSpec::new(layer, combo, lv))
                }))
            }
        }
    }

    /// Stable hash binding checkpoints to this plan.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        to_hex(&Sha256::digest(json.as_bytes()))
    }
}

/// What a campaign runs against: a bare network or one protected by a
/// replication plan (which masks faults on triplicated channels).
#[derive(Clone, Copy)]
pub enum CampaignTarget<'a> {
    Network(&'a Arc<QuantizedNetwork>),
    Protected(&'a ProtectedNetwork),
}

impl<'a> CampaignTarget<'a> {
    fn network(&self) -> &'a Arc<QuantizedNetwork> {
        match self {
            CampaignTarget::Network(n) => n,
            CampaignTarget::Protected(p) => p.base(),
        }
    }

    /// The fault that still reaches hardware after TMR masking.
    fn effective_fault(&self, fault: &FaultSpec) -> Option<FaultSpec> {
        match self {
            CampaignTarget::Network(_) => Some(fault.clone()),
            CampaignTarget::Protected(p) => p.residual_fault(fault),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads; results never depend on this.
    pub jobs: usize,
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many new experiments (smoke runs, kill testing).
    pub limit: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: rayon::current_num_threads(),
            checkpoint: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub plan: CampaignPlan,
    pub baseline_correct: u32,
    pub dataset_len: u32,
    pub results: BTreeMap<FaultSpec, u32>,
    /// False when a limit stopped the run early.
    pub complete: bool,
    pub duration_secs: f64,
    pub jobs: usize,
}

impl CampaignResult {
    pub fn baseline_accuracy_percent(&self) -> f64 {
        100.0 * self.baseline_correct as f64 / self.dataset_len as f64
    }

    pub fn accuracy_percent(&self, correct: u32) -> f64 {
        100.0 * correct as f64 / self.dataset_len as f64
    }

    /// Reconstruct a result from a record log (the result store).
    pub fn load(path: &std::path::Path) -> Result<CampaignResult> {
        let loaded = checkpoint::load(path)?;
        let plan: CampaignPlan = serde_json::from_value(loaded.header.plan.clone())?;
        let baseline = loaded.baseline.ok_or_else(|| {
            Error::PlanMismatch(format!("{} holds no baseline record", path.display()))
        })?;
        let planned = plan.experiment_count();
        Ok(CampaignResult {
            complete: loaded.records.len() as u128 == planned,
            baseline_correct: baseline,
            dataset_len: loaded.header.dataset_len as u32,
            results: loaded.records,
            duration_secs: 0.0,
            jobs: 0,
            plan,
        })
    }
}

/// Run (or resume) a campaign against a plain network.
pub fn run_campaign(
    net: &Arc<QuantizedNetwork>,
    dataset: &LabeledDataset,
    plan: &CampaignPlan,
    opts: &RunOptions,
) -> Result<CampaignResult> {
    run_campaign_on(CampaignTarget::Network(net), dataset, plan, opts)
}

/// Run (or resume) a campaign against any target.
pub fn run_campaign_on(
    target: CampaignTarget,
    dataset: &LabeledDataset,
    plan: &CampaignPlan,
    opts: &RunOptions,
) -> Result<CampaignResult> {
    let started = Instant::now();
    let net = target.network();
    if net.fingerprint() != plan.net_fingerprint {
        return Err(Error::PlanMismatch(
            "plan was built for a different network".into(),
        ));
    }
    if opts.jobs == 0 {
        return Err(Error::usage("jobs must be at least 1"));
    }
    let planned = plan.experiment_count();
    let planned_u64 = u64::try_from(planned)
        .map_err(|_| Error::usage("plan too large to execute; use counts only"))?;

    // attach or create the record log
    let header = CheckpointHeader {
        plan_hash: plan.hash(),
        net_fingerprint: plan.net_fingerprint.clone(),
        dataset_len: dataset.len(),
        planned: planned_u64,
        plan: serde_json::to_value(plan)?,
    };
    let mut done: BTreeMap<FaultSpec, u32> = BTreeMap::new();
    let mut baseline: Option<u32> = None;
    let writer = match &opts.checkpoint {
        None => None,
        Some(path) if path.exists() => {
            let loaded = checkpoint::load(path)?;
            if loaded.header != header {
                return Err(Error::PlanMismatch(format!(
                    "{} belongs to a different plan/network/dataset",
                    path.display()
                )));
            }
            done = loaded.records;
            baseline = loaded.baseline;
            Some(CheckpointWriter::append(path)?)
        }
        Some(path) => Some(CheckpointWriter::create(path, &header)?),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::usage(format!("cannot build worker pool: {e}")))?;

    let baseline_correct = match baseline {
        Some(b) => b,
        None => {
            let eval = pool.install(|| evaluate(net.as_ref(), dataset))?;
            if let Some(w) = &writer {
                w.record_baseline(eval.correct)?;
            }
            eval.correct
        }
    };

    let mut pending: Vec<FaultSpec> = plan
        .experiments()
        .filter(|f| !done.contains_key(f))
        .collect();
    if let Some(limit) = opts.limit {
        pending.truncate(limit);
    }

    let results = Mutex::new(done);
    pool.install(|| {
        pending.par_iter().try_for_each(|fault| -> Result<()> {
            let correct = match target.effective_fault(fault) {
                None => evaluate(net.as_ref(), dataset)?.correct,
                Some(residual) => {
                    let injected = inject(net, &residual)?;
                    evaluate(&injected, dataset)?.correct
                }
            };
            if let Some(w) = &writer {
                w.record(&fault.key(), correct)?;
            }
            results
                .lock()
                .expect("results mutex poisoned")
                .insert(fault.clone(), correct);
            Ok(())
        })
    })?;

    let results = results.into_inner().expect("results mutex poisoned");
    Ok(CampaignResult {
        complete: results.len() as u128 == planned,
        plan: plan.clone(),
        baseline_correct,
        dataset_len: dataset.len() as u32,
        results,
        duration_secs: started.elapsed().as_secs_f64(),
        jobs: opts.jobs,
    })
}

/// Per-(layer, level) extremes over a campaign, Table-style.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub layer: usize,
    pub level: i32,
    pub min_correct: u32,
    pub min_fault: FaultSpec,
    pub max_correct: u32,
    pub max_fault: FaultSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub baseline_correct: u32,
    pub dataset_len: u32,
    pub rows: Vec<SummaryRow>,
}

/// Min/max accuracy per (layer, level) with the channels attaining them.
/// Maxima above baseline are reported as-is (never clamped).
pub fn summarize(result: &CampaignResult) -> CampaignSummary {
    let mut groups: BTreeMap<(usize, i32), SummaryRow> = BTreeMap::new();
    for (fault, &correct) in &result.results {
        groups
            .entry((fault.layer, fault.level))
            .and_modify(|row| {
                if correct < row.min_correct {
                    row.min_correct = correct;
                    row.min_fault = fault.clone();
                }
                if correct > row.max_correct {
                    row.max_correct = correct;
                    row.max_fault = fault.clone();
                }
            })
            .or_insert_with(|| SummaryRow {
                layer: fault.layer,
                level: fault.level,
                min_correct: correct,
                min_fault: fault.clone(),
                max_correct: correct,
                max_fault: fault.clone(),
            });
    }
    CampaignSummary {
        baseline_correct: result.baseline_correct,
        dataset_len: result.dataset_len,
        rows: groups.into_values().collect(),
    }
}

fn pct(correct: u32, total: u32) -> f64 {
    100.0 * correct as f64 / total as f64
}

impl CampaignSummary {
    /// CSV mirroring the whole-channel tables: one row per (layer, level),
    /// min/max accuracy and the channels attaining them.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,level,baseline_correct,baseline_acc,min_correct,min_acc,min_channels,max_correct,max_acc,max_channels\n",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{},{:.4},{},{},{:.4},{}\n",
                row.layer,
                row.level,
                self.baseline_correct,
                pct(self.baseline_correct, self.dataset_len),
                row.min_correct,
                pct(row.min_correct, self.dataset_len),
                join_channels(&row.min_fault.channels),
                row.max_correct,
                pct(row.max_correct, self.dataset_len),
                join_channels(&row.max_fault.channels),
            ));
        }
        out
    }
}

fn join_channels(channels: &[u32]) -> String {
    channels.iter().map(|c| c.to_string()).join("|")
}

/// Export every experiment as CSV (the flat result table).
pub fn result_to_csv(result: &CampaignResult) -> String {
    let mut out = String::from("layer,channels,level,correct,total,accuracy\n");
    out.push_str(&format!(
        "baseline,,,{},{},{:.4}\n",
        result.baseline_correct,
        result.dataset_len,
        pct(result.baseline_correct, result.dataset_len)
    ));
    for (fault, &correct) in &result.results {
        out.push_str(&format!(
            "{},{},{},{},{},{:.4}\n",
            fault.layer,
            join_channels(&fault.channels),
            fault.level,
            correct,
            result.dataset_len,
            pct(correct, result.dataset_len)
        ));
    }
    out
}

/// Correct-count matrix over channel groups sharing one faulty PE.
/// Keys are ascending channel tuples; `level: None` marks a matrix
/// combined over levels by elementwise minimum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccuracyMatrix {
    pub layer: usize,
    pub level: Option<i32>,
    pub group_size: usize,
    pub channels: usize,
    pub entries: BTreeMap<Vec<u32>, u32>,
}

impl AccuracyMatrix {
    pub fn get(&self, group: &[u32]) -> Option<u32> {
        let mut key = group.to_vec();
        key.sort_unstable();
        self.entries.get(&key).copied()
    }

    pub fn get_pair(&self, i: u32, j: u32) -> Option<u32> {
        self.get(&[i, j])
    }

    pub fn max_entry(&self) -> u32 {
        self.entries.values().copied().max().unwrap_or(0)
    }

    pub fn min_entry(&self) -> u32 {
        self.entries.values().copied().min().unwrap_or(0)
    }

    /// Elementwise minimum across per-level matrices of the same shape.
    pub fn combine(matrices: &[&AccuracyMatrix]) -> Result<AccuracyMatrix> {
        let first = *matrices
            .first()
            .ok_or_else(|| Error::usage("combine needs at least one matrix"))?;
        let mut combined = AccuracyMatrix {
            layer: first.layer,
            level: first.level,
            group_size: first.group_size,
            channels: first.channels,
            entries: first.entries.clone(),
        };
        for m in &matrices[1..] {
            if m.layer != first.layer
                || m.group_size != first.group_size
                || m.channels != first.channels
            {
                return Err(Error::usage("matrices cover different instances"));
            }
            if m.entries.len() != first.entries.len() {
                return Err(Error::MissingExperiment(
                    "per-level matrices have different key sets".into(),
                ));
            }
            for (key, value) in &mut combined.entries {
                let other = m.entries.get(key).copied().ok_or_else(|| {
                    Error::MissingExperiment(format!("group {key:?} missing in one level"))
                })?;
                *value = (*value).min(other);
            }
        }
        if matrices.len() > 1 {
            combined.level = None;
        }
        Ok(combined)
    }

    /// Dense symmetric CSV for f=2 heatmaps; empty diagonal.
    pub fn to_dense_csv(&self) -> Result<String> {
        if self.group_size != 2 {
            return Err(Error::usage(format!(
                "dense CSV export requires pair matrices, group size is {}",
                self.group_size
            )));
        }
        let n = self.channels as u32;
        let mut out = String::from("channel");
        for j in 0..n {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for i in 0..n {
            out.push_str(&i.to_string());
            for j in 0..n {
                out.push(',');
                if i != j {
                    let v = self.get_pair(i.min(j), i.max(j)).ok_or_else(|| {
                        Error::MissingExperiment(format!("pair ({i},{j}) absent"))
                    })?;
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse a dense pair CSV back into a matrix.
    pub fn from_dense_csv(csv: &str, layer: usize, level: Option<i32>) -> Result<AccuracyMatrix> {
        let bad = |msg: &str| Error::usage(format!("malformed matrix CSV: {msg}"));
        let mut lines = csv.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let n = header.split(',').count() - 1;
        if n < 2 {
            return Err(bad("fewer than two channels"));
        }
        let mut entries = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let row: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad row index"))?;
            if row != i {
                return Err(bad("row indices out of order"));
            }
            for (j, field) in fields.enumerate() {
                if j >= n {
                    return Err(bad("too many columns"));
                }
                if i < j {
                    let v: u32 = field
                        .trim()
                        .parse()
                        .map_err(|_| bad(&format!("cell ({i},{j}) is not a count")))?;
                    entries.insert(vec![i as u32, j as u32], v);
                }
            }
        }
        if entries.len() != n * (n - 1) / 2 {
            return Err(Error::MissingExperiment(format!(
                "matrix CSV holds {} pairs, expected {}",
                entries.len(),
                n * (n - 1) / 2
            )));
        }
        Ok(AccuracyMatrix {
            layer,
            level,
            group_size: 2,
            channels: n,
            entries,
        })
    }
}

/// Extract the per-level accuracy matrix from a combinations campaign.
/// Every planned group must be present; gaps are structural errors.
pub fn build_accuracy_matrix(result: &CampaignResult, level: i32) -> Result<AccuracyMatrix> {
    let (layer, folding) = match result.plan.mode {
        CampaignMode::PeCombinations { layer, folding } => (layer, folding),
        CampaignMode::WholeChannel => {
            return Err(Error::usage(
                "accuracy matrices come from pe-combinations campaigns",
            ))
        }
    };
    if !result.plan.levels.contains(&level) {
        return Err(Error::usage(format!("level {level} was not part of the plan")));
    }
    let (_, channels) = result.plan.layers[0];
    let mut entries = BTreeMap::new();
    for combo in (0..channels as u32).combinations(folding) {
        let spec = FaultSpec::new(layer, combo.clone(), level);
        let correct = result.results.get(&spec).copied().ok_or_else(|| {
            Error::MissingExperiment(format!("experiment {} never ran", spec.key()))
        })?;
        entries.insert(combo, correct);
    }
    Ok(AccuracyMatrix {
        layer,
        level: Some(level),
        group_size: folding,
        channels,
        entries,
    })
}

/// Accuracy matrix combined over every level in the plan.
pub fn build_combined_matrix(result: &CampaignResult) -> Result<AccuracyMatrix> {
    let per_level: Vec<AccuracyMatrix> = result
        .plan
        .levels
        .iter()
        .map(|&l| build_accuracy_matrix(result, l))
        .collect::<Result<_>>()?;
    let refs: Vec<&AccuracyMatrix> = per_level.iter().collect();
    AccuracyMatrix::combine(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{
        generate_nondegenerate, synthesize_labeled, DatasetLabels, SyntheticModelSpec,
        TopologyLayer,
    };
    use crate::model::quant::QuantSpec;
    use crate::model::tensor::Shape;

    fn tiny_net(act_bits: u8) -> Arc<QuantizedNetwork> {
        let spec = SyntheticModelSpec {
            name: "campaign-tiny".into(),
            seed: 21,
            quant: QuantSpec::new(1, act_bits).unwrap(),
            input_shape: Shape::new(4, 4, 2),
            input_bits: 8,
            layers: vec![
                TopologyLayer::Conv {
                    kernel: 3,
                    stride: 1,
                    pad: 0,
                    out_ch: 4,
                },
                TopologyLayer::Fc { out_n: 6 },
                TopologyLayer::Fc { out_n: 3 },
            ],
            threshold_scale: 2.5,
        };
        Arc::new(generate_nondegenerate(&spec, 64).unwrap())
    }

    #[test]
    fn cnv_shaped_counts() {
        // (64,64,128,128,256,256,512,512) channels, 2 and 3 levels
        let channels = [64usize, 64, 128, 128, 256, 256, 512, 512];
        let plan = CampaignPlan {
            mode: CampaignMode::WholeChannel,
            levels: vec![-1, 1],
            layers: channels.iter().copied().enumerate().collect(),
            net_fingerprint: "x".into(),
        };
        assert_eq!(plan.experiment_count(), 3840);
        let plan3 = CampaignPlan {
            levels: vec![-1, 0, 1],
            ..plan
        };
        assert_eq!(plan3.experiment_count(), 5760);
    }

    #[test]
    fn single_layer_single_level_counts() {
        let plan = CampaignPlan {
            mode: CampaignMode::WholeChannel,
            levels: vec![1],
            layers: vec![(0, 4)],
            net_fingerprint: "x".into(),
        };
        assert_eq!(plan.experiment_count(), 4);
        assert_eq!(plan.experiments().count(), 4);
    }

    #[test]
    fn combination_counts() {
        assert_eq!(binomial(64, 2), 2016);
        // the binomial is 635,376 exactly (the figure 635,276 seen in
        // print is a typo)
        assert_eq!(binomial(64, 4), 635_376);
        assert_eq!(binomial(4, 4), 1);
    }

    #[test]
    fn combination_plan_enumerates_sorted_unique() {
        let net = tiny_net(2);
        let plan = plan_pe_combinations(&net, 0, 2, &[-1, 1]).unwrap();
        assert_eq!(plan.experiment_count(), 6 * 2);
        let specs: Vec<FaultSpec> = plan.experiments().collect();
        assert_eq!(specs.len(), 12);
        for s in &specs {
            assert_eq!(s.channels.len(), 2);
            assert!(s.channels[0] < s.channels[1]);
        }
        let unique: std::collections::BTreeSet<_> = specs.iter().collect();
        assert_eq!(unique.len(), 12);
    }

    #[test]
    fn baseline_matches_direct_evaluation() {
        let net = tiny_net(1);
        let ds = synthesize_labeled(33, &net, 40, DatasetLabels::Model).unwrap();
        let plan = plan_whole_channel(&net, &[-1], Some(&[0])).unwrap();
        let result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        let direct = evaluate(net.as_ref(), &ds).unwrap();
        assert_eq!(result.baseline_correct, direct.correct);
        assert!(result.complete);
    }

    #[test]
    fn campaign_equals_serial_inject_loop() {
        let net = tiny_net(2);
        let ds = synthesize_labeled(34, &net, 30, DatasetLabels::Model).unwrap();
        let plan = plan_whole_channel(&net, &[-1, 0, 1], None).unwrap();
        let result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();

        // serial oracle
        for spec in plan.experiments() {
            let injected = inject(&net, &spec).unwrap();
            let mut correct = 0u32;
            for (image, label) in ds.iter() {
                if injected.infer(image).unwrap() == label as usize {
                    correct += 1;
                }
            }
            assert_eq!(result.results[&spec], correct, "{}", spec.key());
        }
        assert_eq!(result.results.len() as u128, plan.experiment_count());
    }

    #[test]
    fn summary_of_constant_results_is_baseline() {
        let net = tiny_net(1);
        let plan = plan_whole_channel(&net, &[-1, 1], None).unwrap();
        let mut results = BTreeMap::new();
        for spec in plan.experiments() {
            results.insert(spec, 17);
        }
        let result = CampaignResult {
            plan,
            baseline_correct: 17,
            dataset_len: 20,
            results,
            complete: true,
            duration_secs: 0.0,
            jobs: 1,
        };
        let summary = summarize(&result);
        for row in &summary.rows {
            assert_eq!(row.min_correct, 17);
            assert_eq!(row.max_correct, 17);
        }
    }

    #[test]
    fn summary_renders_paper_shaped_fixture() {
        // W1A1 fixture: error-free 79.22%, s@1 min 73.01% of 10,000
        let net = tiny_net(1);
        let plan = plan_whole_channel(&net, &[-1, 1], Some(&[0])).unwrap();
        let mut results = BTreeMap::new();
        for spec in plan.experiments() {
            // channel 1 stuck at +1 is the fragile one
            let correct = if spec.level == 1 && spec.channels == vec![1] {
                7301
            } else {
                7922
            };
            results.insert(spec, correct);
        }
        let result = CampaignResult {
            plan,
            baseline_correct: 7922,
            dataset_len: 10_000,
            results,
            complete: true,
            duration_secs: 0.0,
            jobs: 1,
        };
        let summary = summarize(&result);
        let csv = summary.to_csv();
        let row = summary
            .rows
            .iter()
            .find(|r| r.level == 1)
            .expect("s@1 row");
        assert_eq!(row.min_correct, 7301);
        assert!((result.accuracy_percent(row.min_correct) - 73.01).abs() < 1e-9);
        assert!(csv.contains("73.0100"), "{csv}");
        assert!(csv.contains("79.2200"), "{csv}");
    }

    #[test]
    fn summary_does_not_clamp_above_baseline() {
        let net = tiny_net(1);
        let plan = plan_whole_channel(&net, &[1], Some(&[0])).unwrap();
        let mut results = BTreeMap::new();
        for (i, spec) in plan.experiments().enumerate() {
            // one channel improves on the baseline (paper: +0.54%)
            results.insert(spec, if i == 2 { 7976 } else { 7900 });
        }
        let result = CampaignResult {
            plan,
            baseline_correct: 7922,
            dataset_len: 10_000,
            results,
            complete: true,
            duration_secs: 0.0,
            jobs: 1,
        };
        let summary = summarize(&result);
        assert_eq!(summary.rows[0].max_correct, 7976);
        assert!(summary.rows[0].max_correct > result.baseline_correct);
    }

    #[test]
    fn matrix_requires_every_experiment() {
        let net = tiny_net(2);
        let ds = synthesize_labeled(35, &net, 20, DatasetLabels::Model).unwrap();
        let plan = plan_pe_combinations(&net, 0, 2, &[0]).unwrap();
        let mut result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        assert_eq!(
            build_accuracy_matrix(&result, 0).unwrap().entries.len(),
            6 // C(4,2)
        );
        let key = FaultSpec::new(0, [0u32, 1], 0);
        result.results.remove(&key);
        match build_accuracy_matrix(&result, 0) {
            Err(Error::MissingExperiment(_)) => {}
            other => panic!("expected MissingExperiment, got {other:?}"),
        }
    }

    #[test]
    fn combined_matrix_is_elementwise_min() {
        let net = tiny_net(2);
        let ds = synthesize_labeled(36, &net, 25, DatasetLabels::Model).unwrap();
        let plan = plan_pe_combinations(&net, 0, 2, &[-1, 1]).unwrap();
        let result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        let lo = build_accuracy_matrix(&result, -1).unwrap();
        let hi = build_accuracy_matrix(&result, 1).unwrap();
        let combined = build_combined_matrix(&result).unwrap();
        for (key, &v) in &combined.entries {
            assert_eq!(v, lo.entries[key].min(hi.entries[key]));
        }
        assert_eq!(combined.level, None);
    }

    #[test]
    fn dense_csv_round_trips() {
        let net = tiny_net(2);
        let ds = synthesize_labeled(37, &net, 20, DatasetLabels::Model).unwrap();
        let plan = plan_pe_combinations(&net, 0, 2, &[0]).unwrap();
        let result = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        let matrix = build_accuracy_matrix(&result, 0).unwrap();
        let csv = matrix.to_dense_csv().unwrap();
        let back = AccuracyMatrix::from_dense_csv(&csv, matrix.layer, matrix.level).unwrap();
        assert_eq!(matrix, back);
    }

    #[test]
    fn resume_completes_interrupted_run() {
        let net = tiny_net(1);
        let ds = synthesize_labeled(38, &net, 30, DatasetLabels::Model).unwrap();
        let plan = plan_whole_channel(&net, &[-1, 1], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("run.jsonl");

        let partial = run_campaign(
            &net,
            &ds,
            &plan,
            &RunOptions {
                jobs: 2,
                checkpoint: Some(ckpt.clone()),
                limit: Some(5),
            },
        )
        .unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.results.len(), 5);

        let resumed = run_campaign(
            &net,
            &ds,
            &plan,
            &RunOptions {
                jobs: 3,
                checkpoint: Some(ckpt.clone()),
                limit: None,
            },
        )
        .unwrap();
        assert!(resumed.complete);

        let uninterrupted = run_campaign(&net, &ds, &plan, &RunOptions::default()).unwrap();
        assert_eq!(resumed.results, uninterrupted.results);
        assert_eq!(resumed.baseline_correct, uninterrupted.baseline_correct);

        // no double counting: the store holds exactly planned records
        let loaded = CampaignResult::load(&ckpt).unwrap();
        assert_eq!(loaded.results, uninterrupted.results);
    }

    #[test]
    fn checkpoint_refuses_foreign_plan() {
        let net = tiny_net(1);
        let ds = synthesize_labeled(39, &net, 10, DatasetLabels::Model).unwrap();
        let plan_a = plan_whole_channel(&net, &[-1], None).unwrap();
        let plan_b = plan_whole_channel(&net, &[1], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("run.jsonl");
        run_campaign(
            &net,
            &ds,
            &plan_a,
            &RunOptions {
                jobs: 1,
                checkpoint: Some(ckpt.clone()),
                limit: Some(2),
            },
        )
        .unwrap();
        let err = run_campaign(
            &net,
            &ds,
            &plan_b,
            &RunOptions {
                jobs: 1,
                checkpoint: Some(ckpt),
                limit: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::PlanMismatch(_)));
    }

    #[test]
    fn results_independent_of_jobs() {
        let net = tiny_net(2);
        let ds = synthesize_labeled(40, &net, 25, DatasetLabels::Model).unwrap();
        let plan = plan_whole_channel(&net, &[0], None).unwrap();
        let one = run_campaign(
            &net,
            &ds,
            &plan,
            &RunOptions {
                jobs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let four = run_campaign(
            &net,
            &ds,
            &plan,
            &RunOptions {
                jobs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one.results, four.results);
        assert_eq!(summarize(&one).to_csv(), summarize(&four).to_csv());
    }
}
