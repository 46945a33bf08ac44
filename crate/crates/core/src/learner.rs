//! Maximum-likelihood logistic regression fitted by iteratively reweighted
//! least squares, and block-level out-of-fold probability vectors.

use serde::{Deserialize, Serialize};

use crate::data::{BlockedDataset, FoldAssignment};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-8;
pub const PROB_FLOOR: f64 = 1e-12;
const WEIGHT_FLOOR: f64 = 1e-10;
/// Pivot threshold, relative to the unit diagonal of the correlation matrix.
const RANK_TOL: f64 = 1e-9;

/// A fitted logistic model over an ordered list of feature indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub variables: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Positions (into `variables`) whose coefficient was pinned to zero
    /// because the column was constant or collinear with earlier ones.
    pub pinned: Vec<usize>,
}

impl FittedModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .variables
                .iter()
                .zip(&self.coefficients)
                .map(|(&v, b)| b * row[v])
                .sum::<f64>()
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        logistic(self.linear_predictor(row)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

/// Per-case scores aligned with a dataset's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    values: Vec<f64>,
    pub provenance: String,
}

impl ProbabilityVector {
    pub fn new(values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Numerical(format!(
                "probability {} at row {} outside (0, 1)",
                values[i],
                i + 1
            )));
        }
        Ok(ProbabilityVector {
            values,
            provenance: provenance.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Fits on every row of `ds`.
pub fn fit_logistic(ds: &BlockedDataset, variables: &[usize], ridge: f64) -> Result<FittedModel> {
    let rows: Vec<usize> = (0..ds.n_cases()).collect();
    fit_rows(ds, variables, &rows, ridge)
}

/// Maximizes the Bernoulli log-likelihood minus `ridge / 2 * |beta|^2`
/// (intercept unpenalized) over the given rows.
///
/// Columns are centered and scaled internally with the penalty rescaled to
/// match, so the optimum is the raw-scale one. Constant and collinear columns
/// are detected once by pivoted Cholesky on the correlation matrix and pinned
/// to zero.
pub fn fit_rows(
    ds: &BlockedDataset,
    variables: &[usize],
    rows: &[usize],
    ridge: f64,
) -> Result<FittedModel> {
    let y_all = ds.require_labels()?;
    if variables.is_empty() {
        return Err(Error::InvalidArgument("no variables to fit".into()));
    }
    if let Some(&v) = variables.iter().find(|&&v| v >= ds.n_vars()) {
        return Err(Error::InvalidArgument(format!("variable index {v} out of range")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to fit".into()));
    }

    let n = rows.len();
    let k = variables.len();
    let y: Vec<f64> = rows.iter().map(|&r| y_all[r] as f64).collect();

    // Standardized design, row-major n x k.
    let mut mean = vec![0.0; k];
    for &r in rows {
        for (j, &v) in variables.iter().enumerate() {
            mean[j] += ds.value(r, v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; k];
    for &r in rows {
        for (j, &v) in variables.iter().enumerate() {
            let d = ds.value(r, v) - mean[j];
            scale[j] += d * d;
        }
    }
    scale.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt());

    let nonconstant: Vec<usize> = (0..k).filter(|&j| scale[j] > 0.0).collect();
    let mut z_full = vec![0.0; n * k];
    for (i, &r) in rows.iter().enumerate() {
        for &j in &nonconstant {
            z_full[i * k + j] = (ds.value(r, variables[j]) - mean[j]) / scale[j];
        }
    }
    let active = independent_columns(&z_full, n, k, &nonconstant);
    let pinned: Vec<usize> = (0..k).filter(|j| !active.contains(j)).collect();

    // Reduced design with a leading intercept column.
    let p = active.len() + 1;
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        x[i * p] = 1.0;
        for (a, &j) in active.iter().enumerate() {
            x[i * p + a + 1] = z_full[i * k + j];
        }
    }
    let mut penalty = vec![0.0; p];
    for (a, &j) in active.iter().enumerate() {
        penalty[a + 1] = ridge / (scale[j] * scale[j]);
    }

    let objective = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let eta: f64 = (0..p).map(|c| x[i * p + c] * beta[c]).sum();
            // y * eta - log(1 + e^eta), written to avoid cancellation
            ll -= if y[i] > 0.5 { softplus(-eta) } else { softplus(eta) };
        }
        ll - 0.5 * (0..p).map(|c| penalty[c] * beta[c] * beta[c]).sum::<f64>()
    };

    let to_raw = |beta: &[f64]| -> (f64, Vec<f64>) {
        let mut coef = vec![0.0; k];
        let mut intercept = beta[0];
        for (a, &j) in active.iter().enumerate() {
            coef[j] = beta[a + 1] / scale[j];
            intercept -= coef[j] * mean[j];
        }
        (intercept, coef)
    };

    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut beta = vec![0.0; p];
    beta[0] = if ybar > 0.0 && ybar < 1.0 {
        (ybar / (1.0 - ybar)).ln()
    } else {
        0.0
    };
    let mut current = objective(&beta);
    let mut raw = to_raw(&beta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for i in 0..n {
            let xi = &x[i * p..(i + 1) * p];
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pi = logistic(eta);
            let w = (pi * (1.0 - pi)).max(WEIGHT_FLOOR);
            let resid = y[i] - pi;
            for a in 0..p {
                grad[a] += resid * xi[a];
                let wa = w * xi[a];
                for b in 0..=a {
                    hess[a * p + b] += wa * xi[b];
                }
            }
        }
        for a in 0..p {
            grad[a] -= penalty[a] * beta[a];
            hess[a * p + a] += penalty[a];
            for b in 0..a {
                hess[b * p + a] = hess[a * p + b];
            }
        }
        let step = cholesky_solve(&mut hess, &grad, p).ok_or_else(|| {
            Error::Numerical("weighted least-squares system is not positive definite".into())
        })?;

        // Step halving keeps the penalized likelihood from decreasing.
        let mut t = 1.0;
        let mut candidate;
        let mut value;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect::<Vec<_>>();
            value = objective(&candidate);
            if value >= current - 1e-12 * current.abs() {
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                break;
            }
        }
        if t < 1e-10 {
            // No ascent possible at working precision.
            converged = grad.iter().all(|g| g.abs() < 1e-6 * n as f64);
            break;
        }
        if !value.is_finite() || candidate.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite coefficients during IRLS".into()));
        }
        let next_raw = to_raw(&candidate);
        let change = next_raw
            .1
            .iter()
            .zip(&raw.1)
            .map(|(a, b)| (a - b).abs())
            .fold((next_raw.0 - raw.0).abs(), f64::max);
        beta = candidate;
        current = value;
        raw = next_raw;
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }

    let (intercept, coefficients) = raw;
    if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite fitted coefficients".into()));
    }
    Ok(FittedModel {
        intercept,
        coefficients,
        variables: variables.to_vec(),
        converged,
        iterations,
        pinned,
    })
}

/// Greedy pivoted Cholesky on the correlation matrix of the standardized
/// columns; returns the columns that stay linearly independent, ascending.
fn independent_columns(z: &[f64], n: usize, k: usize, candidates: &[usize]) -> Vec<usize> {
    let m = candidates.len();
    if m == 0 {
        return Vec::new();
    }
    let mut corr = vec![0.0; m * m];
    for i in 0..n {
        let row = &z[i * k..(i + 1) * k];
        for a in 0..m {
            let za = row[candidates[a]];
            for b in 0..=a {
                corr[a * m + b] += za * row[candidates[b]];
            }
        }
    }
    for a in 0..m {
        for b in 0..=a {
            corr[a * m + b] /= n as f64;
            corr[b * m + a] = corr[a * m + b];
        }
    }

    // Residual diagonal after projecting out chosen pivots.
    let mut diag: Vec<f64> = (0..m).map(|a| corr[a * m + a]).collect();
    let mut factors: Vec<Vec<f64>> = Vec::new();
    let mut chosen = Vec::new();
    let mut remaining: Vec<usize> = (0..m).collect();
    loop {
        let best = remaining
            .iter()
            .copied()
            .fold(None::<usize>, |acc, a| match acc {
                Some(b) if diag[b] >= diag[a] => Some(b),
                _ => Some(a),
            });
        let Some(piv) = best else { break };
        if diag[piv] <= RANK_TOL {
            break;
        }
        let d = diag[piv].sqrt();
        let col: Vec<f64> = (0..m)
            .map(|a| {
                let s: f64 = factors.iter().map(|f| f[a] * f[piv]).sum();
                (corr[a * m + piv] - s) / d
            })
            .collect();
        for &a in &remaining {
            diag[a] -= col[a] * col[a];
        }
        factors.push(col);
        chosen.push(piv);
        remaining.retain(|&a| a != piv);
    }
    let mut out: Vec<usize> = chosen.into_iter().map(|a| candidates[a]).collect();
    out.sort_unstable();
    out
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut x = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            x[i] -= a[i * p + k] * x[k];
        }
        x[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            x[i] -= a[k * p + i] * x[k];
        }
        x[i] /= a[i * p + i];
    }
    Some(x)
}

pub fn predict(model: &FittedModel, ds: &BlockedDataset) -> Result<ProbabilityVector> {
    if let Some(&v) = model.variables.iter().find(|&&v| v >= ds.n_vars()) {
        return Err(Error::Validation(format!(
            "model uses feature {} but dataset has {}",
            v + 1,
            ds.n_vars()
        )));
    }
    let values = (0..ds.n_cases()).map(|r| model.probability(ds.row(r))).collect();
    ProbabilityVector::new(values, provenance(&model.variables))
}

pub(crate) fn provenance(variables: &[usize]) -> String {
    let names: Vec<String> = variables.iter().map(|v| (v + 1).to_string()).collect();
    format!("x{{{}}}", names.join(","))
}

/// Out-of-fold probabilities: each fold's blocks are scored by a model fitted
/// on the remaining folds.
pub fn cv_probabilities(
    ds: &BlockedDataset,
    variables: &[usize],
    folds: &FoldAssignment,
    ridge: f64,
) -> Result<ProbabilityVector> {
    let block_fold = folds.block_folds(ds)?;
    let y = ds.require_labels()?;
    let fold_of_row: Vec<usize> = ds.block_of_row().iter().map(|&b| block_fold[b]).collect();
    let mut values = vec![f64::NAN; ds.n_cases()];
    for k in 0..folds.v {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..ds.n_cases()).partition(|&r| fold_of_row[r] == k);
        if test.is_empty() {
            continue;
        }
        if !train.iter().any(|&r| y[r] == 1) {
            return Err(Error::Validation(format!(
                "training split for fold {k} has no positive cases"
            )));
        }
        let model = fit_rows(ds, variables, &train, ridge)?;
        for r in test {
            values[r] = model.probability(ds.row(r));
        }
    }
    ProbabilityVector::new(values, format!("cv {}", provenance(variables)))
}
