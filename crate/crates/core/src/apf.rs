//! Phalanx formation: filter weak variables, greedily merge variable groups
//! into candidate phalanxes, then filter candidates that do not help the
//! others in an ensemble.
//!
//! Every group is scored by the block-averaged metric of its out-of-fold
//! probability vector on one shared block-level fold assignment. For a pair
//! of groups `i`, `j` four numbers drive all decisions:
//!
//! - `a_i`, `a_j`: each group alone,
//! - `a_ij`: one model fitted on the union of both groups,
//! - `a_ij_bar`: the mean of the two groups' probability vectors.
//!
//! The phases are written for either metric direction. For a minimized
//! metric (RKL) every inequality and extremum flips.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, BlockedDataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learner::{cv_probabilities, ProbabilityVector};
use crate::metrics::{block_average, permutation_reference, MetricId, MetricSpec, ReferenceDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfConfig {
    pub folds: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub ridge: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        ApfConfig {
            folds: 10,
            n_perm: 2000,
            seed: 0,
            ridge: 1e-6,
        }
    }
}

/// A set of feature indices (0-based, ascending) modelled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phalanx {
    pub variables: Vec<usize>,
    pub cv_score: f64,
}

impl fmt::Display for Phalanx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars: Vec<String> = self.variables.iter().map(|v| (v + 1).to_string()).collect();
        write!(f, "{{{}}} ({:.4})", vars.join(","), self.cv_score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub a_i: f64,
    pub a_j: f64,
    pub a_ij: f64,
    pub a_ij_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    Drop,
    /// Kept by the degenerate-survivor rule after every variable failed.
    Retain,
    Merge,
    Stop,
    Ineligible,
}

/// One decision of the algorithm with the values that caused it.
///
/// Variable indices are 0-based. `target` is the variable set acted on: the
/// filtered variable, the merged union, or the dropped phalanx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: u8,
    pub iteration: usize,
    pub pair: (Vec<usize>, Vec<usize>),
    /// Written as `null` when undefined.
    #[serde(deserialize_with = "number_or_nan")]
    pub criterion: f64,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PairScores>,
}

fn number_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl TraceRecord {
    fn new(phase: u8, iteration: usize, pair: (Vec<usize>, Vec<usize>), criterion: f64, action: Action) -> Self {
        TraceRecord {
            phase,
            iteration,
            pair,
            criterion,
            action,
            target: None,
            scores: None,
        }
    }

    fn with_target(mut self, target: Vec<usize>) -> Self {
        self.target = Some(target);
        self
    }

    fn with_scores(mut self, scores: PairScores) -> Self {
        self.scores = Some(scores);
        self
    }
}

/// Phase counts: total and post-filter variables, candidate and final
/// phalanxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub total: usize,
    pub survivors: usize,
    pub candidates: usize,
    pub finals: usize,
}

impl PhaseCounts {
    /// Recovers the counts from a trace alone.
    pub fn from_trace(trace: &[TraceRecord]) -> Self {
        let count = |phase: u8, action: Action| {
            trace
                .iter()
                .filter(|r| r.phase == phase && r.action == action)
                .count()
        };
        let total = count(1, Action::Keep) + count(1, Action::Drop);
        let survivors = count(1, Action::Keep) + count(1, Action::Retain);
        let candidates = survivors - count(2, Action::Merge);
        let finals = candidates - count(3, Action::Drop);
        PhaseCounts {
            total,
            survivors,
            candidates,
            finals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApfResult {
    pub metric: MetricSpec,
    pub config: ApfConfig,
    pub n_vars: usize,
    pub survivors_phase1: Vec<usize>,
    pub candidates_phase2: Vec<Phalanx>,
    pub final_phase3: Vec<Phalanx>,
    /// Set when phase 1 dropped every variable and the best one was kept.
    pub degenerate: bool,
    pub trace: Vec<TraceRecord>,
    pub reference: ReferenceDistribution,
}

impl ApfResult {
    pub fn counts(&self) -> PhaseCounts {
        PhaseCounts {
            total: self.n_vars,
            survivors: self.survivors_phase1.len(),
            candidates: self.candidates_phase2.len(),
            finals: self.final_phase3.len(),
        }
    }
}

/// Memoized out-of-fold probability vectors and metric values, keyed by
/// sorted variable set. Safe to share across threads and across metrics.
pub struct Evaluator<'a> {
    ds: &'a BlockedDataset,
    folds: &'a FoldAssignment,
    ridge: f64,
    vectors: Mutex<HashMap<Vec<usize>, Arc<ProbabilityVector>>>,
    scores: Mutex<HashMap<(Vec<usize>, MetricId), f64>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(ds: &'a BlockedDataset, folds: &'a FoldAssignment, ridge: f64) -> Self {
        Evaluator {
            ds,
            folds,
            ridge,
            vectors: Mutex::new(HashMap::new()),
            scores: Mutex::new(HashMap::new()),
        }
    }

    pub fn dataset(&self) -> &BlockedDataset {
        self.ds
    }

    pub fn folds(&self) -> &FoldAssignment {
        self.folds
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Out-of-fold probabilities of one model on `vars`.
    pub fn vector(&self, vars: &[usize]) -> Result<Arc<ProbabilityVector>> {
        let key = sorted(vars);
        if let Some(v) = self.vectors.lock().unwrap().get(&key) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(cv_probabilities(self.ds, &key, self.folds, self.ridge)?);
        Ok(Arc::clone(self.vectors.lock().unwrap().entry(key).or_insert(v)))
    }

    pub fn score(&self, vars: &[usize], metric: &MetricSpec) -> Result<f64> {
        let key = (sorted(vars), metric.id);
        if let Some(&s) = self.scores.lock().unwrap().get(&key) {
            return Ok(s);
        }
        let s = block_average(self.ds, self.vector(vars)?.values(), metric)?;
        self.scores.lock().unwrap().insert(key, s);
        Ok(s)
    }

    /// Metric of the mean of the two groups' vectors.
    pub fn ensemble_score(&self, a: &[usize], b: &[usize], metric: &MetricSpec) -> Result<f64> {
        let va = self.vector(a)?;
        let vb = self.vector(b)?;
        let mean: Vec<f64> = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        block_average(self.ds, &mean, metric)
    }

    pub fn pair_scores(&self, a: &[usize], b: &[usize], metric: &MetricSpec) -> Result<PairScores> {
        Ok(PairScores {
            a_i: self.score(a, metric)?,
            a_j: self.score(b, metric)?,
            a_ij: self.score(&union(a, b), metric)?,
            a_ij_bar: self.ensemble_score(a, b, metric)?,
        })
    }

    /// Number of distinct variable sets fitted so far.
    pub fn cached_vectors(&self) -> usize {
        self.vectors.lock().unwrap().len()
    }
}

fn sorted(vars: &[usize]) -> Vec<usize> {
    let mut v = vars.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Pairs `(i, j)`, `i < j`, over groups already ordered by smallest
/// variable, so iteration order is the tie-break order.
fn pair_indices(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn is_fit_failure(e: &Error) -> bool {
    matches!(e, Error::Numerical(_))
}

pub struct VariableFilter {
    pub survivors: Vec<usize>,
    pub degenerate: bool,
    pub trace: Vec<TraceRecord>,
}

/// Phase 1. Variable `i` is dropped when, for every other `j`,
/// `max[a_i, a_med + a_ij - a_j, a_med + a_ij_bar - a_j] < a_alpha`
/// (minimized metrics: `min[...] > r_alpha`). All decisions are taken
/// against the full variable set at once.
pub fn filter_variables(
    eval: &Evaluator,
    metric: &MetricSpec,
    reference: &ReferenceDistribution,
) -> Result<VariableFilter> {
    let d = eval.dataset().n_vars();
    let cut = reference.quantile(metric.alpha);
    let median = reference.median();
    let maximize = metric.maximize();

    let singles: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|i| eval.score(&[i], metric))
        .collect::<Result<_>>()?;

    let pairs = pair_indices(d);
    let joint: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a_ij = match eval.score(&[i, j], metric) {
                Ok(v) => v,
                Err(e) if is_fit_failure(&e) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some((a_ij, eval.ensemble_score(&[i], &[j], metric)?)))
        })
        .collect::<Result<_>>()?;
    let mut pair_values: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    for (&(i, j), v) in pairs.iter().zip(&joint) {
        if let Some(v) = v {
            pair_values.insert((i, j), *v);
        }
    }

    let passes = |v: f64| if maximize { v >= cut } else { v <= cut };
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };

    let mut trace = Vec::new();
    let mut survivors = Vec::new();
    for i in 0..d {
        // Most favourable criterion over partners j.
        let mut best = (singles[i], None::<usize>);
        for j in (0..d).filter(|&j| j != i) {
            let key = (i.min(j), i.max(j));
            let Some(&(a_ij, a_bar)) = pair_values.get(&key) else {
                trace.push(TraceRecord::new(1, 0, (vec![i], vec![j]), f64::NAN, Action::Ineligible));
                continue;
            };
            let terms = [singles[i], median + a_ij - singles[j], median + a_bar - singles[j]];
            let crit = if maximize {
                terms.into_iter().fold(f64::NEG_INFINITY, f64::max)
            } else {
                terms.into_iter().fold(f64::INFINITY, f64::min)
            };
            if better(crit, best.0) {
                best = (crit, Some(j));
            }
        }
        let keep = passes(best.0);
        let partner = best.1.map(|j| vec![j]).unwrap_or_default();
        let action = if keep { Action::Keep } else { Action::Drop };
        trace.push(TraceRecord::new(1, 0, (vec![i], partner), best.0, action).with_target(vec![i]));
        if keep {
            survivors.push(i);
        }
    }

    let mut degenerate = false;
    if survivors.is_empty() {
        let mut winner = 0;
        for i in 1..d {
            if better(singles[i], singles[winner]) {
                winner = i;
            }
        }
        survivors.push(winner);
        degenerate = true;
        trace.push(
            TraceRecord::new(1, 0, (vec![winner], vec![]), singles[winner], Action::Retain)
                .with_target(vec![winner]),
        );
        log::warn!("every variable failed the reference cut; retaining variable {}", winner + 1);
    }

    Ok(VariableFilter {
        survivors,
        degenerate,
        trace,
    })
}

fn sort_groups(groups: &mut [Vec<usize>]) {
    groups.sort_by_key(|g| g[0]);
}

/// Evaluates every pair of `groups` in parallel; fit failures become `None`.
fn all_pair_scores(
    eval: &Evaluator,
    groups: &[Vec<usize>],
    metric: &MetricSpec,
) -> Result<Vec<((usize, usize), Option<PairScores>)>> {
    pair_indices(groups.len())
        .into_par_iter()
        .map(|(i, j)| match eval.pair_scores(&groups[i], &groups[j], metric) {
            Ok(s) => Ok(((i, j), Some(s))),
            Err(e) if is_fit_failure(&e) => Ok(((i, j), None)),
            Err(e) => Err(e),
        })
        .collect()
}

/// Merge criterion `m_ij`, or `None` when the divisor is unusable.
pub fn merge_criterion(s: &PairScores, maximize: bool) -> Option<f64> {
    if !(s.a_ij.is_finite() && s.a_ij > 0.0) {
        return None;
    }
    let num = if maximize {
        s.a_ij_bar.max(s.a_i).max(s.a_j)
    } else {
        s.a_ij_bar.min(s.a_i).min(s.a_j)
    };
    let m = num / s.a_ij;
    m.is_finite().then_some(m)
}

/// Phalanx-filter criterion `f_ij`, or `None` when the divisor is unusable.
pub fn filter_criterion(s: &PairScores, maximize: bool) -> Option<f64> {
    let den = if maximize { s.a_i.max(s.a_j) } else { s.a_i.min(s.a_j) };
    if !(den.is_finite() && den > 0.0) {
        return None;
    }
    let f = s.a_ij_bar / den;
    f.is_finite().then_some(f)
}

/// Phase 2. Starting from singletons, repeatedly takes the pair with the
/// extremal `m_ij = max(a_ij_bar, a_i, a_j) / a_ij` (smallest; largest with
/// `min` for minimized metrics) and merges it while `m < 1` (`m > 1`).
pub fn merge_phase(
    eval: &Evaluator,
    survivors: &[usize],
    metric: &MetricSpec,
) -> Result<(Vec<Phalanx>, Vec<TraceRecord>)> {
    if survivors.is_empty() {
        return Err(Error::InvalidArgument("merge phase needs at least one variable".into()));
    }
    let maximize = metric.maximize();
    let mut groups: Vec<Vec<usize>> = sorted(survivors).into_iter().map(|v| vec![v]).collect();
    let mut trace = Vec::new();
    let mut iteration = 0;

    while groups.len() > 1 {
        iteration += 1;
        let scored = all_pair_scores(eval, &groups, metric)?;
        let mut best: Option<((usize, usize), f64, PairScores)> = None;
        for ((i, j), s) in scored {
            let crit = s.as_ref().and_then(|s| merge_criterion(s, maximize));
            let (Some(s), Some(m)) = (s, crit) else {
                let mut rec = TraceRecord::new(2, iteration, (groups[i].clone(), groups[j].clone()), f64::NAN, Action::Ineligible);
                rec.scores = s;
                trace.push(rec);
                continue;
            };
            let improves = match &best {
                None => true,
                Some((_, b, _)) => if maximize { m < *b } else { m > *b },
            };
            if improves {
                best = Some(((i, j), m, s));
            }
        }
        let Some(((i, j), m, s)) = best else {
            trace.push(TraceRecord::new(2, iteration, (vec![], vec![]), f64::NAN, Action::Stop));
            break;
        };
        let pair = (groups[i].clone(), groups[j].clone());
        let merge = if maximize { m < 1.0 } else { m > 1.0 };
        if !merge {
            trace.push(TraceRecord::new(2, iteration, pair, m, Action::Stop).with_scores(s));
            break;
        }
        let merged = union(&groups[i], &groups[j]);
        log::debug!("merge {:?} + {:?} (m = {m})", groups[i], groups[j]);
        trace.push(TraceRecord::new(2, iteration, pair, m, Action::Merge).with_target(merged.clone()).with_scores(s));
        groups.remove(j);
        groups[i] = merged;
        sort_groups(&mut groups);
    }

    let phalanxes = groups
        .into_iter()
        .map(|g| {
            let cv_score = eval.score(&g, metric)?;
            Ok(Phalanx {
                variables: g,
                cv_score,
            })
        })
        .collect::<Result<_>>()?;
    Ok((phalanxes, trace))
}

/// Phase 3. Repeatedly takes the pair with the extremal
/// `f_ij = a_ij_bar / max(a_i, a_j)` (smallest; largest with `min` for
/// minimized metrics) and, while `f <= 1` (`f >= 1`), drops the weaker member
/// of that pair. On equal scores the first phalanx of the pair (smaller
/// leading variable) is dropped.
pub fn filter_phalanxes(
    eval: &Evaluator,
    candidates: &[Phalanx],
    metric: &MetricSpec,
) -> Result<(Vec<Phalanx>, Vec<TraceRecord>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate phalanxes".into()));
    }
    let maximize = metric.maximize();
    let mut current: Vec<Phalanx> = candidates.to_vec();
    current.sort_by_key(|p| p.variables[0]);
    let mut trace = Vec::new();
    let mut iteration = 0;

    while current.len() > 1 {
        iteration += 1;
        let groups: Vec<Vec<usize>> = current.iter().map(|p| p.variables.clone()).collect();
        let scored = all_pair_scores(eval, &groups, metric)?;
        let mut best: Option<((usize, usize), f64, PairScores)> = None;
        for ((i, j), s) in scored {
            let crit = s.as_ref().and_then(|s| filter_criterion(s, maximize));
            let (Some(s), Some(f)) = (s, crit) else {
                let mut rec = TraceRecord::new(3, iteration, (groups[i].clone(), groups[j].clone()), f64::NAN, Action::Ineligible);
                rec.scores = s;
                trace.push(rec);
                continue;
            };
            let improves = match &best {
                None => true,
                Some((_, b, _)) => if maximize { f < *b } else { f > *b },
            };
            if improves {
                best = Some(((i, j), f, s));
            }
        }
        let Some(((i, j), f, s)) = best else {
            trace.push(TraceRecord::new(3, iteration, (vec![], vec![]), f64::NAN, Action::Stop));
            break;
        };
        let pair = (groups[i].clone(), groups[j].clone());
        let drop = if maximize { f <= 1.0 } else { f >= 1.0 };
        if !drop {
            trace.push(TraceRecord::new(3, iteration, pair, f, Action::Stop).with_scores(s));
            break;
        }
        let first_weaker = if maximize { s.a_i <= s.a_j } else { s.a_i >= s.a_j };
        let victim = if first_weaker { i } else { j };
        log::debug!("drop phalanx {:?} (f = {f})", groups[victim]);
        trace.push(TraceRecord::new(3, iteration, pair, f, Action::Drop).with_target(groups[victim].clone()).with_scores(s));
        current.remove(victim);
    }
    Ok((current, trace))
}

/// Runs all three phases on `ds` for one metric.
pub fn run_apf(ds: &BlockedDataset, metric: &MetricSpec, config: &ApfConfig) -> Result<ApfResult> {
    ds.check_positive_blocks()?;
    let folds = make_folds(ds, config.folds, config.seed)?;
    let eval = Evaluator::new(ds, &folds, config.ridge);
    run_apf_with(&eval, metric, config)
}

/// Runs all three phases with an existing evaluator, so that several metrics
/// can share fitted vectors. The evaluator's folds must come from `config`.
pub fn run_apf_with(eval: &Evaluator, metric: &MetricSpec, config: &ApfConfig) -> Result<ApfResult> {
    let ds = eval.dataset();
    ds.check_positive_blocks()?;
    if eval.folds().v != config.folds || eval.folds().seed != config.seed {
        return Err(Error::InvalidArgument("evaluator folds do not match the configuration".into()));
    }
    let reference = permutation_reference(ds, metric, config.n_perm, config.seed)?;
    log::info!(
        "{} reference: median {:.6}, cut {:.6} at alpha {}",
        metric.id,
        reference.median(),
        reference.quantile(metric.alpha),
        metric.alpha
    );

    let filtered = filter_variables(eval, metric, &reference)?;
    let (candidates, merge_trace) = merge_phase(eval, &filtered.survivors, metric)?;
    let (finals, filter_trace) = filter_phalanxes(eval, &candidates, metric)?;

    let mut trace = filtered.trace;
    trace.extend(merge_trace);
    trace.extend(filter_trace);
    Ok(ApfResult {
        metric: *metric,
        config: *config,
        n_vars: ds.n_vars(),
        survivors_phase1: filtered.survivors,
        candidates_phase2: candidates,
        final_phase3: finals,
        degenerate: filtered.degenerate,
        trace,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_pairs, PlantedConfig};

    #[test]
    fn single_survivor_is_one_phalanx() {
        let ds = planted_pairs(&PlantedConfig::small(), 1);
        let folds = make_folds(&ds, 5, 1).unwrap();
        let eval = Evaluator::new(&ds, &folds, 1e-6);
        let (groups, trace) = merge_phase(&eval, &[3], &MetricSpec::apr()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].variables, vec![3]);
        assert!(trace.is_empty());
    }

    #[test]
    fn single_candidate_is_unchanged() {
        let ds = planted_pairs(&PlantedConfig::small(), 2);
        let folds = make_folds(&ds, 5, 1).unwrap();
        let eval = Evaluator::new(&ds, &folds, 1e-6);
        let cand = vec![Phalanx {
            variables: vec![0, 1],
            cv_score: eval.score(&[0, 1], &MetricSpec::apr()).unwrap(),
        }];
        let (finals, trace) = filter_phalanxes(&eval, &cand, &MetricSpec::apr()).unwrap();
        assert_eq!(finals, cand);
        assert!(trace.is_empty());
    }

    #[test]
    fn criteria_guards() {
        let s = PairScores {
            a_i: 0.5,
            a_j: 0.4,
            a_ij: 0.0,
            a_ij_bar: 0.6,
        };
        assert_eq!(merge_criterion(&s, true), None);
        let s = PairScores { a_ij: 0.8, ..s };
        assert_eq!(merge_criterion(&s, true), Some(0.6 / 0.8));
        assert_eq!(filter_criterion(&s, true), Some(0.6 / 0.5));
        assert_eq!(filter_criterion(&s, false), Some(0.6 / 0.4));
        assert_eq!(merge_criterion(&s, false), Some(0.4 / 0.8));
    }

    #[test]
    fn counts_from_trace_match() {
        let ds = planted_pairs(&PlantedConfig::small(), 4);
        let cfg = ApfConfig {
            folds: 5,
            n_perm: 200,
            seed: 4,
            ridge: 1e-6,
        };
        for metric in [MetricSpec::apr(), MetricSpec::rkl()] {
            let res = run_apf(&ds, &metric, &cfg).unwrap();
            assert_eq!(PhaseCounts::from_trace(&res.trace), res.counts());
            let c = res.counts();
            assert!(c.finals >= 1 && c.finals <= c.candidates && c.candidates <= c.survivors && c.survivors <= c.total);
        }
    }
}
