//! Fault-aware channel-to-PE scheduling.
//!
//! Given the pairwise (or f-way) accuracy matrix E measured by a
//! combinations campaign, find the channel grouping that maximizes the
//! worst-case accuracy under a single faulty PE. The max-min objective
//! is solved exactly: for f=2 by bottleneck search (binary search over
//! distinct E values with perfect-matching feasibility), for larger
//! folding factors by branch-and-bound over set partitions with
//! bottleneck pruning. Both return the lexicographically smallest
//! optimal grouping.

pub mod matching;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rayon::prelude::*;

use crate::campaign::{binomial, AccuracyMatrix};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::inject::{inject, FaultSpec};
use crate::model::network::{evaluate, QuantizedNetwork};
use crate::model::schedule::default_schedule;

/// One layer's scheduling problem: N channels, folding factor f, and the
/// combined accuracy matrix. `m_acc` is the best correct count any
/// single faulty PE leaves reachable (the largest E entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulingInstance {
    pub folding: usize,
    pub matrix: AccuracyMatrix,
    pub m_acc: u32,
}

impl SchedulingInstance {
    pub fn from_matrix(matrix: AccuracyMatrix) -> Result<Self> {
        let n = matrix.channels;
        let f = matrix.group_size;
        if f == 0 || n == 0 {
            return Err(Error::usage("empty scheduling instance"));
        }
        if n % f != 0 {
            return Err(Error::usage(format!(
                "channel count {n} not divisible by folding factor {f}"
            )));
        }
        let expected = binomial(n as u64, f as u64);
        if matrix.entries.len() as u128 != expected {
            return Err(Error::MissingExperiment(format!(
                "matrix holds {} groups, expected C({n},{f}) = {expected}",
                matrix.entries.len()
            )));
        }
        let m_acc = matrix.max_entry();
        Ok(SchedulingInstance {
            folding: f,
            matrix,
            m_acc,
        })
    }

    pub fn channels(&self) -> usize {
        self.matrix.channels
    }
}

/// A channel partition with its worst-case correct count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleSolution {
    /// Groups sorted internally and by first element.
    pub groups: Vec<Vec<u32>>,
    pub min_acc: u32,
    /// True when the search proved optimality (no time-budget cutoff).
    pub optimal: bool,
}

/// Worst group of a schedule: the min E entry over its PE groups.
pub fn worst_case_of_schedule(
    groups: &[Vec<u32>],
    matrix: &AccuracyMatrix,
) -> Result<(u32, Vec<u32>)> {
    if groups.is_empty() {
        return Err(Error::usage("schedule has no groups"));
    }
    let mut worst: Option<(u32, Vec<u32>)> = None;
    for group in groups {
        let e = matrix.get(group).ok_or_else(|| {
            Error::MissingExperiment(format!("no E entry for group {group:?}"))
        })?;
        if worst.as_ref().is_none_or(|(w, _)| e < *w) {
            let mut g = group.clone();
            g.sort_unstable();
            worst = Some((e, g));
        }
    }
    Ok(worst.expect("at least one group"))
}

/// The default modulo schedule as channel groups (requires f | N).
pub fn default_groups(n: usize, f: usize) -> Result<Vec<Vec<u32>>> {
    if f == 0 || n % f != 0 {
        return Err(Error::usage(format!(
            "folding factor {f} does not divide {n} channels"
        )));
    }
    let schedule = default_schedule(0, n, n / f)?;
    Ok(schedule
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|c| c as u32).collect())
        .collect())
}

/// Elementwise-minimum combination of per-level matrices.
pub fn combine_levels(matrices: &[&AccuracyMatrix]) -> Result<AccuracyMatrix> {
    AccuracyMatrix::combine(matrices)
}

/// Exact max-min schedule for an instance.
pub fn optimal_schedule(
    instance: &SchedulingInstance,
    budget: Option<Duration>,
) -> Result<ScheduleSolution> {
    let channels: Vec<u32> = (0..instance.channels() as u32).collect();
    solve_channels(&channels, instance.folding, &instance.matrix, budget)
}

/// Schedule only the non-replicated channels; triplicated ones run on
/// their own protected PEs and never contribute to E.
pub fn schedule_with_replication(
    instance: &SchedulingInstance,
    replicated: &BTreeSet<u32>,
    budget: Option<Duration>,
) -> Result<ScheduleSolution> {
    let n = instance.channels() as u32;
    if let Some(&ch) = replicated.iter().find(|&&ch| ch >= n) {
        return Err(Error::usage(format!("replicated channel {ch} out of range")));
    }
    let remaining: Vec<u32> = (0..n).filter(|ch| !replicated.contains(ch)).collect();
    if remaining.is_empty() {
        return Ok(ScheduleSolution {
            groups: vec![],
            min_acc: instance.m_acc,
            optimal: true,
        });
    }
    if remaining.len() % instance.folding != 0 {
        return Err(Error::usage(format!(
            "{} unreplicated channels not divisible by folding factor {}",
            remaining.len(),
            instance.folding
        )));
    }
    solve_channels(&remaining, instance.folding, &instance.matrix, budget)
}

fn solve_channels(
    channels: &[u32],
    f: usize,
    matrix: &AccuracyMatrix,
    budget: Option<Duration>,
) -> Result<ScheduleSolution> {
    debug_assert!(channels.windows(2).all(|w| w[0] < w[1]));
    if channels.len() % f != 0 {
        return Err(Error::usage(format!(
            "{} channels not divisible by folding factor {f}",
            channels.len()
        )));
    }
    let deadline = budget.map(|b| Instant::now() + b);
    if f == 2 {
        solve_pairs(channels, matrix, deadline)
    } else {
        solve_partitions(channels, f, matrix, deadline)
    }
}

fn entry(matrix: &AccuracyMatrix, group: &[u32]) -> Result<u32> {
    matrix
        .get(group)
        .ok_or_else(|| Error::MissingExperiment(format!("no E entry for group {group:?}")))
}

/// Bottleneck perfect matching: binary search the sorted distinct E
/// values, testing each threshold with blossom matching feasibility.
fn solve_pairs(
    channels: &[u32],
    matrix: &AccuracyMatrix,
    deadline: Option<Instant>,
) -> Result<ScheduleSolution> {
    let n = channels.len();
    let mut values: Vec<u32> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(entry(matrix, &[channels[i], channels[j]])?);
        }
    }
    values.sort_unstable();
    values.dedup();

    let adjacency = |threshold: u32| -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if matrix.get_pair(channels[i], channels[j]).expect("checked") >= threshold {
                    adj[i][j] = true;
                    adj[j][i] = true;
                }
            }
        }
        adj
    };

    // the weakest threshold admits the complete graph, which always has
    // a perfect matching on an even vertex count
    let mut best_idx = 0;
    let mut best_pairs =
        matching::perfect_matching_pairs(&adjacency(values[0])).expect("complete graph");
    let (mut lo, mut hi) = (1usize, values.len().saturating_sub(1));
    let mut timed_out = false;
    while lo <= hi && hi > 0 {
        if deadline.is_some_and(|d| Instant::now() > d) {
            timed_out = true;
            break;
        }
        let mid = lo + (hi - lo) / 2;
        match matching::perfect_matching_pairs(&adjacency(values[mid])) {
            Some(pairs) => {
                best_idx = mid;
                best_pairs = pairs;
                lo = mid + 1;
            }
            None => {
                if mid == 0 {
                    break;
                }
                hi = mid - 1;
            }
        }
    }
    let bottleneck = values[best_idx];

    let groups = if timed_out {
        pairs_to_groups(&best_pairs, channels)
    } else {
        lex_smallest_matching(channels, matrix, bottleneck)?
    };
    let (min_acc, _) = worst_case_of_schedule(&groups, matrix)?;
    debug_assert!(timed_out || min_acc == bottleneck);
    Ok(ScheduleSolution {
        groups,
        min_acc,
        optimal: !timed_out,
    })
}

fn pairs_to_groups(pairs: &[(usize, usize)], channels: &[u32]) -> Vec<Vec<u32>> {
    let mut groups: Vec<Vec<u32>> = pairs
        .iter()
        .map(|&(a, b)| {
            let mut g = vec![channels[a], channels[b]];
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort();
    groups
}

/// Greedily build the lexicographically smallest perfect matching whose
/// every edge meets the bottleneck, keeping the remainder feasible.
fn lex_smallest_matching(
    channels: &[u32],
    matrix: &AccuracyMatrix,
    bottleneck: u32,
) -> Result<Vec<Vec<u32>>> {
    let mut remaining: Vec<u32> = channels.to_vec();
    let mut groups = Vec::with_capacity(channels.len() / 2);
    while !remaining.is_empty() {
        let leader = remaining[0];
        let mut chosen = None;
        for (idx, &candidate) in remaining.iter().enumerate().skip(1) {
            if entry(matrix, &[leader, candidate])? < bottleneck {
                continue;
            }
            let rest: Vec<u32> = remaining
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != 0 && i != idx)
                .map(|(_, &c)| c)
                .collect();
            if rest.is_empty() || feasible_rest(&rest, matrix, bottleneck) {
                chosen = Some((idx, candidate));
                break;
            }
        }
        let (idx, partner) =
            chosen.expect("bottleneck-feasible remainder always has a partner");
        groups.push(vec![leader, partner]);
        remaining.remove(idx);
        remaining.remove(0);
    }
    Ok(groups)
}

fn feasible_rest(rest: &[u32], matrix: &AccuracyMatrix, threshold: u32) -> bool {
    let n = rest.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if matrix.get_pair(rest[i], rest[j]).unwrap_or(0) >= threshold {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    matching::has_perfect_matching(&adj)
}

/// Branch-and-bound over set partitions in lexicographic order with
/// bottleneck pruning; exact for any folding factor.
fn solve_partitions(
    channels: &[u32],
    f: usize,
    matrix: &AccuracyMatrix,
    deadline: Option<Instant>,
) -> Result<ScheduleSolution> {
    // seed the incumbent with consecutive chunks (the lex-first
    // partition) so a timeout always has a best-found answer
    let seed: Vec<Vec<u32>> = channels.chunks(f).map(|c| c.to_vec()).collect();
    let (seed_value, _) = worst_case_of_schedule(&seed, matrix)?;

    let mut search = PartitionSearch {
        f,
        matrix,
        deadline,
        timed_out: false,
        best_value: seed_value,
        best_groups: seed,
    };
    let mut committed = Vec::with_capacity(channels.len() / f);
    search.dfs(channels.to_vec(), &mut committed, u32::MAX)?;

    Ok(ScheduleSolution {
        groups: search.best_groups,
        min_acc: search.best_value,
        optimal: !search.timed_out,
    })
}

struct PartitionSearch<'a> {
    f: usize,
    matrix: &'a AccuracyMatrix,
    deadline: Option<Instant>,
    timed_out: bool,
    best_value: u32,
    best_groups: Vec<Vec<u32>>,
}

impl PartitionSearch<'_> {
    fn dfs(
        &mut self,
        remaining: Vec<u32>,
        committed: &mut Vec<Vec<u32>>,
        current_min: u32,
    ) -> Result<()> {
        if self.timed_out {
            return Ok(());
        }
        if self.deadline.is_some_and(|d| Instant::now() > d) {
            self.timed_out = true;
            return Ok(());
        }
        if remaining.is_empty() {
            if current_min > self.best_value {
                self.best_value = current_min;
                self.best_groups = committed.clone();
            }
            return Ok(());
        }
        let leader = remaining[0];
        for partners in remaining[1..].iter().copied().combinations(self.f - 1) {
            let mut group = Vec::with_capacity(self.f);
            group.push(leader);
            group.extend(&partners);
            let e = entry(self.matrix, &group)?;
            let new_min = current_min.min(e);
            if new_min <= self.best_value {
                continue; // cannot strictly beat the incumbent
            }
            let partner_set: BTreeSet<u32> = partners.iter().copied().collect();
            let rest: Vec<u32> = remaining[1..]
                .iter()
                .copied()
                .filter(|c| !partner_set.contains(c))
                .collect();
            committed.push(group);
            self.dfs(rest, committed, new_min)?;
            committed.pop();
            if self.timed_out {
                return Ok(());
            }
        }
        Ok(())
    }
}

/// Per-PE accuracies of the default schedule when each PE in turn is
/// stuck at `level`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldingPoint {
    pub folding: usize,
    pub pe_count: usize,
    pub dataset_len: u32,
    /// Correct count when PE `i` is the faulty one.
    pub per_pe_correct: Vec<u32>,
}

impl FoldingPoint {
    pub fn min_correct(&self) -> u32 {
        *self.per_pe_correct.iter().min().expect("at least one PE")
    }

    pub fn max_correct(&self) -> u32 {
        *self.per_pe_correct.iter().max().expect("at least one PE")
    }

    pub fn worst_pe(&self) -> usize {
        let min = self.min_correct();
        self.per_pe_correct.iter().position(|&c| c == min).unwrap()
    }

    pub fn average_accuracy_percent(&self) -> f64 {
        let sum: u64 = self.per_pe_correct.iter().map(|&c| c as u64).sum();
        100.0 * sum as f64 / (self.per_pe_correct.len() as u64 * self.dataset_len as u64) as f64
    }

    pub fn min_accuracy_percent(&self) -> f64 {
        100.0 * self.min_correct() as f64 / self.dataset_len as f64
    }

    pub fn max_accuracy_percent(&self) -> f64 {
        100.0 * self.max_correct() as f64 / self.dataset_len as f64
    }
}

/// Evaluate the default schedule of one layer across folding factors,
/// injecting every PE in turn stuck at `level`.
pub fn folding_sweep(
    net: &Arc<QuantizedNetwork>,
    layer: usize,
    dataset: &LabeledDataset,
    foldings: &[usize],
    level: i32,
) -> Result<Vec<FoldingPoint>> {
    let out_ch = net
        .layers
        .get(layer)
        .and_then(|l| l.out_channels())
        .ok_or_else(|| Error::usage(format!("layer {layer} has no output channels")))?;
    let mut points = Vec::with_capacity(foldings.len());
    for &f in foldings {
        if f == 0 || out_ch % f != 0 {
            return Err(Error::usage(format!(
                "folding factor {f} does not divide {out_ch} channels"
            )));
        }
        let pe_count = out_ch / f;
        let schedule = default_schedule(layer, out_ch, pe_count)?;
        let per_pe_correct: Vec<u32> = schedule
            .groups()
            .into_par_iter()
            .map(|group| -> Result<u32> {
                let fault =
                    FaultSpec::new(layer, group.into_iter().map(|c| c as u32), level);
                let injected = inject(net, &fault)?;
                Ok(evaluate(&injected, dataset)?.correct)
            })
            .collect::<Result<_>>()?;
        points.push(FoldingPoint {
            folding: f,
            pe_count,
            dataset_len: dataset.len() as u32,
            per_pe_correct,
        });
    }
    Ok(points)
}
