//! Per-block ranking metrics, block averages, hit curves, and permutation
//! reference distributions.
//!
//! Cases are ranked by descending score. Ties never help: inside a group of
//! equal scores the negatives are placed ahead of the positives. This one
//! ordering drives every metric in the module, so APR, RKL, TOP1 and the hit
//! curve all agree on what a tie costs.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BlockedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "APR")]
    Apr,
    #[serde(rename = "RKL")]
    Rkl,
    #[serde(rename = "TOP1")]
    Top1,
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricId::Apr => "APR",
            MetricId::Rkl => "RKL",
            MetricId::Top1 => "TOP1",
        })
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apr" => Ok(MetricId::Apr),
            "rkl" => Ok(MetricId::Rkl),
            "top1" => Ok(MetricId::Top1),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// A ranking metric with its optimization direction and reference-quantile
/// level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub id: MetricId,
    pub direction: Direction,
    pub alpha: f64,
}

impl MetricSpec {
    /// Direction follows the metric; alpha defaults to 0.95 for maximized
    /// metrics and 0.05 for minimized ones.
    pub fn new(id: MetricId) -> Self {
        let direction = match id {
            MetricId::Apr | MetricId::Top1 => Direction::Maximize,
            MetricId::Rkl => Direction::Minimize,
        };
        let alpha = match direction {
            Direction::Maximize => 0.95,
            Direction::Minimize => 0.05,
        };
        MetricSpec {
            id,
            direction,
            alpha,
        }
    }

    pub fn apr() -> Self {
        MetricSpec::new(MetricId::Apr)
    }

    pub fn rkl() -> Self {
        MetricSpec::new(MetricId::Rkl)
    }

    pub fn top1() -> Self {
        MetricSpec::new(MetricId::Top1)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn maximize(&self) -> bool {
        self.direction == Direction::Maximize
    }

    /// Metric value of one block.
    pub fn block_value(&self, labels: &[u8], scores: &[f64]) -> Result<f64> {
        match self.id {
            MetricId::Apr => apr_block(labels, scores),
            MetricId::Rkl => rkl_block(labels, scores).map(|r| r as f64),
            MetricId::Top1 => top1_block(labels, scores).map(f64::from),
        }
    }
}

/// Indices in ranking order: descending score, negatives before positives
/// among equal scores, then by index.
pub fn ranking_order(labels: &[u8], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(labels[a].cmp(&labels[b]))
            .then(a.cmp(&b))
    });
    order
}

/// 1-based rank of each case under [`ranking_order`].
pub fn ranks(labels: &[u8], scores: &[f64]) -> Vec<usize> {
    let mut out = vec![0; scores.len()];
    for (pos, i) in ranking_order(labels, scores).into_iter().enumerate() {
        out[i] = pos + 1;
    }
    out
}

fn check_block(labels: &[u8], scores: &[f64]) -> Result<usize> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let h = labels.iter().filter(|&&y| y == 1).count();
    if h == 0 {
        return Err(Error::Validation("block has no positive cases".into()));
    }
    Ok(h)
}

/// Average precision: mean over positives of hits-so-far / rank.
pub fn apr_block(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let h = check_block(labels, scores)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, i) in ranking_order(labels, scores).into_iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / h as f64)
}

/// Rank of the last positive; a tie is charged at the end of its group.
pub fn rkl_block(labels: &[u8], scores: &[f64]) -> Result<usize> {
    check_block(labels, scores)?;
    let order = ranking_order(labels, scores);
    let last = order.iter().rposition(|&i| labels[i] == 1).unwrap();
    Ok(last + 1)
}

/// 1 iff every case tied at the top score is positive.
pub fn top1_block(labels: &[u8], scores: &[f64]) -> Result<u8> {
    check_block(labels, scores)?;
    let first = ranking_order(labels, scores)[0];
    Ok(labels[first])
}

fn block_slices(ds: &BlockedDataset, scores: &[f64], block: usize) -> (Vec<u8>, Vec<f64>) {
    let y = ds.labels().expect("labels checked by caller");
    let rows = &ds.block_rows()[block];
    (
        rows.iter().map(|&r| y[r]).collect(),
        rows.iter().map(|&r| scores[r]).collect(),
    )
}

/// Metric value of every block, in `ds.block_keys()` order.
pub fn per_block(ds: &BlockedDataset, scores: &[f64], metric: &MetricSpec) -> Result<Vec<f64>> {
    ds.require_labels()?;
    if scores.len() != ds.n_cases() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} cases",
            scores.len(),
            ds.n_cases()
        )));
    }
    (0..ds.n_blocks())
        .map(|b| {
            let (y, s) = block_slices(ds, scores, b);
            metric.block_value(&y, &s).map_err(|e| match e {
                Error::Validation(msg) => {
                    Error::Validation(format!("block {:?}: {msg}", ds.block_keys()[b]))
                }
                other => other,
            })
        })
        .collect()
}

/// Unweighted mean of the per-block metric.
pub fn block_average(ds: &BlockedDataset, scores: &[f64], metric: &MetricSpec) -> Result<f64> {
    let values = per_block(ds, scores, metric)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Cumulative positives among the top `t` cases, for `t = 1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCurve {
    pub hits: Vec<usize>,
    pub n: usize,
    pub h: usize,
}

impl HitCurve {
    /// Two columns, `t` and `h_t`, one row per depth.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t\thits")?;
        for (t, h) in self.hits.iter().enumerate() {
            writeln!(out, "{}\t{h}", t + 1)?;
        }
        Ok(())
    }
}

pub fn hit_curve(labels: &[u8], scores: &[f64]) -> Result<HitCurve> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut acc = 0;
    let hits: Vec<usize> = ranking_order(labels, scores)
        .into_iter()
        .map(|i| {
            acc += labels[i] as usize;
            acc
        })
        .collect();
    Ok(HitCurve {
        n: hits.len(),
        h: acc,
        hits,
    })
}

/// Block-averaged metric values under random relabelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    pub samples: Vec<f64>,
    pub metric: MetricSpec,
    pub n_perm: usize,
    pub seed: u64,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn new(samples: Vec<f64>, metric: MetricSpec, seed: u64) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        ReferenceDistribution {
            n_perm: samples.len(),
            samples,
            metric,
            seed,
            sorted,
        }
    }

    /// Inverse empirical CDF: the smallest sample `x` with `F(x) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// The cut at the metric's own alpha.
    pub fn cut(&self) -> f64 {
        self.quantile(self.metric.alpha)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Two columns, replicate index and sample value.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "replicate\tvalue")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{}\t{v}", i + 1)?;
        }
        Ok(())
    }
}

/// Reference distribution with cases ranked in file order within each block.
pub fn permutation_reference(
    ds: &BlockedDataset,
    metric: &MetricSpec,
    n_perm: usize,
    seed: u64,
) -> Result<ReferenceDistribution> {
    let n = ds.n_cases();
    let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    permutation_reference_with_scores(ds, &scores, metric, n_perm, seed)
}

/// Reference distribution for a fixed ranking `scores`.
///
/// Each replicate shuffles the labels inside every block, keeping the
/// per-block positive counts, and records the block-averaged metric.
/// Replicate `r` draws from ChaCha8 stream `r` of `seed`, so the samples do
/// not depend on how replicates are scheduled across threads.
pub fn permutation_reference_with_scores(
    ds: &BlockedDataset,
    scores: &[f64],
    metric: &MetricSpec,
    n_perm: usize,
    seed: u64,
) -> Result<ReferenceDistribution> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("n_perm must be at least 1".into()));
    }
    ds.check_positive_blocks()?;
    if scores.len() != ds.n_cases() {
        return Err(Error::InvalidArgument("scores not aligned to dataset".into()));
    }
    let blocks: Vec<(Vec<u8>, Vec<f64>)> = (0..ds.n_blocks())
        .map(|b| block_slices(ds, scores, b))
        .collect();

    let samples = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut total = 0.0;
            for (labels, s) in &blocks {
                let mut y = labels.clone();
                y.shuffle(&mut rng);
                total += metric.block_value(&y, s)?;
            }
            Ok(total / blocks.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ReferenceDistribution::new(samples, *metric, seed))
}

/// Compares two metric values under a direction: `Less` means `a` is worse.
pub fn compare(direction: Direction, a: f64, b: f64) -> Ordering {
    match direction {
        Direction::Maximize => a.total_cmp(&b),
        Direction::Minimize => b.total_cmp(&a),
    }
}
