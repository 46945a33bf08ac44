//! Ensembles of phalanx models (EM), their aggregation across metrics (EMM),
//! and win/tie/loss rank diagnostics between two score vectors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::apf::{ApfConfig, ApfResult, Phalanx};
use crate::data::BlockedDataset;
use crate::error::{Error, Result};
use crate::learner::{fit_logistic, predict, FittedModel, ProbabilityVector};
use crate::metrics::{ranks, MetricSpec, ReferenceDistribution};

/// Final phalanxes with one full-data logistic model each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub metric: MetricSpec,
    pub phalanxes: Vec<Phalanx>,
    pub models: Vec<FittedModel>,
    pub config: ApfConfig,
    pub n_vars: usize,
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

pub fn build_em(ds: &BlockedDataset, apf: &ApfResult, ridge: f64) -> Result<EnsembleModel> {
    if apf.final_phase3.is_empty() {
        return Err(Error::InvalidArgument("no final phalanxes".into()));
    }
    let models = apf
        .final_phase3
        .iter()
        .map(|p| {
            fit_logistic(ds, &p.variables, ridge).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("phalanx {p}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        metric: apf.metric,
        phalanxes: apf.final_phase3.clone(),
        models,
        config: ApfConfig { ridge, ..apf.config },
        n_vars: ds.n_vars(),
    })
}

/// Componentwise mean of equally long vectors.
pub fn mean_vectors(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to average".into()))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::InvalidArgument("vectors differ in length".into()));
    }
    let k = vectors.len() as f64;
    Ok((0..first.len())
        .map(|i| vectors.iter().map(|v| v[i]).sum::<f64>() / k)
        .collect())
}

/// Per-phalanx probability vectors, in phalanx order.
pub fn phalanx_predictions(em: &EnsembleModel, ds: &BlockedDataset) -> Result<Vec<ProbabilityVector>> {
    if ds.n_vars() != em.n_vars {
        return Err(Error::Validation(format!(
            "dataset has {} features, model expects {}",
            ds.n_vars(),
            em.n_vars
        )));
    }
    em.models.iter().map(|m| predict(m, ds)).collect()
}

pub fn predict_em(em: &EnsembleModel, ds: &BlockedDataset) -> Result<ProbabilityVector> {
    let parts = phalanx_predictions(em, ds)?;
    let slices: Vec<&[f64]> = parts.iter().map(|p| p.values()).collect();
    ProbabilityVector::new(mean_vectors(&slices)?, format!("EM-{}", em.metric.id))
}

/// Mean of two ensembles' probability vectors.
pub fn build_emm(a: &ProbabilityVector, b: &ProbabilityVector) -> Result<ProbabilityVector> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot average vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let values = mean_vectors(&[a.values(), b.values()])?;
    ProbabilityVector::new(values, format!("EMM({}, {})", a.provenance, b.provenance))
}

/// Normalized ranks of one positive case under two score vectors and their
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveRanks {
    pub block: String,
    pub case: String,
    pub rank_a: f64,
    pub rank_b: f64,
    pub rank_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCounts {
    pub lo: f64,
    pub hi: f64,
    pub positives: usize,
    pub a_wins: usize,
    pub ties: usize,
    pub b_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub records: Vec<PositiveRanks>,
    /// Quartiles of the mean-vector normalized ranks.
    pub edges: [f64; 3],
    pub bins: Vec<BinCounts>,
}

impl RankDiagnostics {
    pub fn totals(&self) -> BinCounts {
        self.bins.iter().fold(
            BinCounts {
                lo: 0.0,
                hi: 1.0,
                positives: 0,
                a_wins: 0,
                ties: 0,
                b_wins: 0,
            },
            |acc, b| BinCounts {
                positives: acc.positives + b.positives,
                a_wins: acc.a_wins + b.a_wins,
                ties: acc.ties + b.ties,
                b_wins: acc.b_wins + b.b_wins,
                ..acc
            },
        )
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_lo\tbin_hi\tpositives\ta_wins\tties\tb_wins")?;
        for b in self.bins.iter().chain(std::iter::once(&self.totals())) {
            writeln!(
                out,
                "{:.5}\t{:.5}\t{}\t{}\t{}\t{}",
                b.lo, b.hi, b.positives, b.a_wins, b.ties, b.b_wins
            )?;
        }
        Ok(())
    }
}

/// Compares two score vectors positive by positive.
///
/// Ranks are 1-based within each block (descending score, ties pessimistic)
/// and divided by the block size. Bins are `[0, q1)`, `[q1, q2)`,
/// `[q2, q3)`, `[q3, 1]` over the quartiles of the ranks under the mean of
/// the two vectors. A win for `a` means `a` ranks the positive strictly
/// higher (smaller rank) than `b`.
pub fn rank_diagnostics(ds: &BlockedDataset, a: &[f64], b: &[f64]) -> Result<RankDiagnostics> {
    let y = ds.require_labels()?;
    if a.len() != ds.n_cases() || b.len() != ds.n_cases() {
        return Err(Error::InvalidArgument("score vectors not aligned to dataset".into()));
    }
    let mean = mean_vectors(&[a, b])?;
    let mut records = Vec::new();
    for (block, rows) in ds.block_rows().iter().enumerate() {
        let labels: Vec<u8> = rows.iter().map(|&r| y[r]).collect();
        let gather = |s: &[f64]| -> Vec<usize> {
            let v: Vec<f64> = rows.iter().map(|&r| s[r]).collect();
            ranks(&labels, &v)
        };
        let (ra, rb, rm) = (gather(a), gather(b), gather(&mean));
        let size = rows.len() as f64;
        for (k, &r) in rows.iter().enumerate() {
            if y[r] == 1 {
                records.push(PositiveRanks {
                    block: ds.block_keys()[block].clone(),
                    case: ds.case_label(r),
                    rank_a: ra[k] as f64 / size,
                    rank_b: rb[k] as f64 / size,
                    rank_mean: rm[k] as f64 / size,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Validation("dataset has no positive cases".into()));
    }

    let means: Vec<f64> = records.iter().map(|r| r.rank_mean).collect();
    let dist = ReferenceDistribution::new(means, crate::metrics::MetricSpec::apr(), 0);
    let edges = [dist.quantile(0.25), dist.quantile(0.5), dist.quantile(0.75)];
    let bounds = [0.0, edges[0], edges[1], edges[2], 1.0];
    let mut bins: Vec<BinCounts> = (0..4)
        .map(|k| BinCounts {
            lo: bounds[k],
            hi: bounds[k + 1],
            positives: 0,
            a_wins: 0,
            ties: 0,
            b_wins: 0,
        })
        .collect();
    for r in &records {
        let k = edges.iter().filter(|&&e| r.rank_mean >= e).count();
        let bin = &mut bins[k];
        bin.positives += 1;
        if r.rank_a < r.rank_b {
            bin.a_wins += 1;
        } else if r.rank_b < r.rank_a {
            bin.b_wins += 1;
        } else {
            bin.ties += 1;
        }
    }
    Ok(RankDiagnostics {
        records,
        edges,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emm_of_opposites() {
        let a = ProbabilityVector::new(vec![0.999, 0.001], "a").unwrap();
        let b = ProbabilityVector::new(vec![0.001, 0.999], "b").unwrap();
        assert_eq!(build_emm(&a, &b).unwrap().values(), &[0.5, 0.5]);
        assert_eq!(build_emm(&a, &a).unwrap().values(), a.values());
    }

    #[test]
    fn emm_length_mismatch() {
        let a = ProbabilityVector::new(vec![0.2], "a").unwrap();
        let b = ProbabilityVector::new(vec![0.2, 0.3], "b").unwrap();
        assert!(build_emm(&a, &b).is_err());
    }

    #[test]
    fn mean_of_two_phalanx_vectors() {
        let m = mean_vectors(&[&[0.2, 0.8], &[0.4, 0.6]]).unwrap();
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);
    }

    fn block(labels: Vec<u8>) -> BlockedDataset {
        let n = labels.len();
        BlockedDataset::new(vec!["b".into(); n], None, Some(labels), vec![0.0; n], 1).unwrap()
    }

    #[test]
    fn identical_scores_are_all_ties() {
        let ds = block(vec![1, 0, 1, 0, 0, 1]);
        let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let d = rank_diagnostics(&ds, &s, &s).unwrap();
        let t = d.totals();
        assert_eq!((t.positives, t.ties, t.a_wins, t.b_wins), (3, 3, 0, 0));
    }

    #[test]
    fn single_a_win() {
        let ds = block(vec![1, 0, 0, 0]);
        let a = [0.9, 0.5, 0.4, 0.3];
        let b = [0.6, 0.7, 0.4, 0.3];
        let d = rank_diagnostics(&ds, &a, &b).unwrap();
        assert_eq!(d.records[0].rank_a, 0.25);
        assert_eq!(d.records[0].rank_b, 0.5);
        let t = d.totals();
        assert_eq!((t.positives, t.a_wins, t.ties, t.b_wins), (1, 1, 0, 0));
        let nonempty: Vec<_> = d.bins.iter().filter(|b| b.positives > 0).collect();
        assert_eq!(nonempty.len(), 1);
        assert_eq!(nonempty[0].a_wins, 1);
    }
}
