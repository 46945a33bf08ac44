//! Versioned JSON model document.
//!
//! Real numbers are stored as decimal strings with 17 significant digits so
//! that a write, read, write cycle reproduces the file byte for byte.
//! Variable indices are 0-based.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apf::{ApfConfig, Phalanx};
use crate::data::BlockedDataset;
use crate::ensemble::{build_emm, predict_em, EnsembleModel};
use crate::error::{Error, Result};
use crate::learner::{FittedModel, ProbabilityVector};
use crate::metrics::{Direction, MetricId, MetricSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Em,
    Emm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: DocumentKind,
    pub ensembles: Vec<EnsembleDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub metric: MetricId,
    pub direction: Direction,
    pub alpha: String,
    pub seed: u64,
    pub folds: usize,
    pub n_perm: usize,
    pub ridge: String,
    pub n_features: usize,
    pub phalanxes: Vec<PhalanxDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhalanxDocument {
    pub variables: Vec<usize>,
    pub cv_score: String,
    pub intercept: String,
    pub coefficients: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default)]
    pub pinned: Vec<usize>,
}

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Document(format!("not a real number: {s:?}")))
}

impl EnsembleDocument {
    pub fn from_model(em: &EnsembleModel) -> Self {
        EnsembleDocument {
            metric: em.metric.id,
            direction: em.metric.direction,
            alpha: format_real(em.metric.alpha),
            seed: em.config.seed,
            folds: em.config.folds,
            n_perm: em.config.n_perm,
            ridge: format_real(em.config.ridge),
            n_features: em.n_vars,
            phalanxes: em
                .phalanxes
                .iter()
                .zip(&em.models)
                .map(|(p, m)| PhalanxDocument {
                    variables: m.variables.clone(),
                    cv_score: format_real(p.cv_score),
                    intercept: format_real(m.intercept),
                    coefficients: m.coefficients.iter().map(|&c| format_real(c)).collect(),
                    converged: m.converged,
                    iterations: m.iterations,
                    pinned: m.pinned.clone(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<EnsembleModel> {
        let metric = MetricSpec::new(self.metric).with_alpha(parse_real(&self.alpha)?)?;
        if metric.direction != self.direction {
            return Err(Error::Document(format!(
                "metric {} cannot have direction {:?}",
                self.metric, self.direction
            )));
        }
        if self.phalanxes.is_empty() {
            return Err(Error::Document("ensemble has no phalanxes".into()));
        }
        let mut phalanxes = Vec::new();
        let mut models = Vec::new();
        for p in &self.phalanxes {
            if p.variables.len() != p.coefficients.len() {
                return Err(Error::Document("coefficient count differs from variable count".into()));
            }
            if let Some(&v) = p.variables.iter().find(|&&v| v >= self.n_features) {
                return Err(Error::Document(format!("variable {v} beyond n_features")));
            }
            phalanxes.push(Phalanx {
                variables: p.variables.clone(),
                cv_score: parse_real(&p.cv_score)?,
            });
            models.push(FittedModel {
                intercept: parse_real(&p.intercept)?,
                coefficients: p.coefficients.iter().map(|c| parse_real(c)).collect::<Result<_>>()?,
                variables: p.variables.clone(),
                converged: p.converged,
                iterations: p.iterations,
                pinned: p.pinned.clone(),
            });
        }
        Ok(EnsembleModel {
            metric,
            phalanxes,
            models,
            config: ApfConfig {
                folds: self.folds,
                n_perm: self.n_perm,
                seed: self.seed,
                ridge: parse_real(&self.ridge)?,
            },
            n_vars: self.n_features,
        })
    }
}

impl ModelDocument {
    pub fn em(model: &EnsembleModel) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            kind: DocumentKind::Em,
            ensembles: vec![EnsembleDocument::from_model(model)],
        }
    }

    pub fn emm(apr: &EnsembleModel, rkl: &EnsembleModel) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            kind: DocumentKind::Emm,
            ensembles: vec![EnsembleDocument::from_model(apr), EnsembleDocument::from_model(rkl)],
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Document(format!(
                    "unsupported format version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Document("missing format_version".into())),
        }
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let expected = match doc.kind {
            DocumentKind::Em => 1,
            DocumentKind::Emm => 2,
        };
        if doc.ensembles.len() != expected {
            return Err(Error::Document(format!(
                "{:?} document needs {expected} ensemble(s), found {}",
                doc.kind,
                doc.ensembles.len()
            )));
        }
        Ok(doc)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelDocument::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn models(&self) -> Result<Vec<EnsembleModel>> {
        self.ensembles.iter().map(EnsembleDocument::to_model).collect()
    }

    pub fn n_features(&self) -> usize {
        self.ensembles[0].n_features
    }

    /// EM probabilities, or the mean of the two EMs for an EMM document.
    pub fn predict(&self, ds: &BlockedDataset) -> Result<ProbabilityVector> {
        if ds.n_vars() != self.n_features() {
            return Err(Error::Validation(format!(
                "dataset has {} features, model expects {}",
                ds.n_vars(),
                self.n_features()
            )));
        }
        let models = self.models()?;
        let preds = models
            .iter()
            .map(|m| predict_em(m, ds))
            .collect::<Result<Vec<_>>>()?;
        match preds.as_slice() {
            [one] => Ok(one.clone()),
            [a, b] => build_emm(a, b),
            _ => Err(Error::Document("unexpected ensemble count".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> EnsembleModel {
        EnsembleModel {
            metric: MetricSpec::apr(),
            phalanxes: vec![
                Phalanx {
                    variables: vec![0, 3],
                    cv_score: 0.1 + 0.2,
                },
                Phalanx {
                    variables: vec![1],
                    cv_score: 1.0 / 3.0,
                },
            ],
            models: vec![
                FittedModel {
                    intercept: -4.123456789012345,
                    coefficients: vec![1e-300, -2.5],
                    variables: vec![0, 3],
                    converged: true,
                    iterations: 7,
                    pinned: vec![],
                },
                FittedModel {
                    intercept: std::f64::consts::PI,
                    coefficients: vec![f64::MIN_POSITIVE],
                    variables: vec![1],
                    converged: false,
                    iterations: 100,
                    pinned: vec![0],
                },
            ],
            config: ApfConfig::default(),
            n_vars: 5,
        }
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let doc = ModelDocument::em(&sample_model());
        let text = doc.to_json();
        let back = ModelDocument::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.models().unwrap()[0], sample_model());
    }

    #[test]
    fn version_is_checked() {
        let text = ModelDocument::em(&sample_model())
            .to_json()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        let err = ModelDocument::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn emm_needs_two_ensembles() {
        let mut doc = ModelDocument::em(&sample_model());
        doc.kind = DocumentKind::Emm;
        assert!(ModelDocument::from_json(&doc.to_json()).is_err());
    }
}
