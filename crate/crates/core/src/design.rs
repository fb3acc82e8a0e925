//! Covariate selection shared by the hazard regressions.

use crate::error::{Error, Result};
use crate::panel::{Panel, Row, SubjectRecord};

pub const INTERCEPT: &str = "(Intercept)";
pub const TREATMENT: &str = "treat";

/// Which columns enter a hazard regression.
///
/// Column order is intercept (additive models only), baselines, treatment,
/// then time-varying covariates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Formula {
    pub baselines: Vec<String>,
    pub treatment: bool,
    pub covariates: Vec<String>,
}

impl Formula {
    pub fn treatment_only() -> Self {
        Formula {
            treatment: true,
            ..Formula::default()
        }
    }

    /// Treatment plus every baseline and time-varying covariate in the panel.
    pub fn full(panel: &Panel) -> Self {
        Formula {
            baselines: panel.baseline_names().to_vec(),
            treatment: true,
            covariates: panel.covariate_names().to_vec(),
        }
    }

    /// Treatment plus every baseline covariate.
    pub fn marginal(panel: &Panel) -> Self {
        Formula {
            baselines: panel.baseline_names().to_vec(),
            treatment: true,
            covariates: Vec::new(),
        }
    }
}

/// A formula resolved against a panel's column layout.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    intercept: bool,
    baselines: Vec<usize>,
    treatment: bool,
    covariates: Vec<usize>,
}

impl Design {
    pub fn resolve(panel: &Panel, formula: &Formula, intercept: bool) -> Result<Self> {
        let baselines = formula
            .baselines
            .iter()
            .map(|b| panel.baseline_index(b))
            .collect::<Result<Vec<_>>>()?;
        let covariates = formula
            .covariates
            .iter()
            .map(|c| panel.covariate_index(c))
            .collect::<Result<Vec<_>>>()?;
        let mut names = Vec::new();
        if intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(formula.baselines.iter().cloned());
        if formula.treatment {
            names.push(TREATMENT.to_string());
        }
        names.extend(formula.covariates.iter().cloned());
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidConfig(format!("column `{dup}` appears twice")));
        }
        Ok(Design {
            names,
            intercept,
            baselines,
            treatment: formula.treatment,
            covariates,
        })
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn fill(&self, subject: &SubjectRecord, row: &Row, out: &mut [f64]) {
        let mut k = 0;
        if self.intercept {
            out[k] = 1.0;
            k += 1;
        }
        for &b in &self.baselines {
            out[k] = subject.baseline[b];
            k += 1;
        }
        if self.treatment {
            out[k] = if row.treated { 1.0 } else { 0.0 };
            k += 1;
        }
        for &c in &self.covariates {
            out[k] = row.covariates[c];
            k += 1;
        }
    }
}

/// Positive per-row weights aligned with a panel's subjects and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWeights(pub Vec<Vec<f64>>);

impl RowWeights {
    pub fn constant(panel: &Panel, w: f64) -> Self {
        RowWeights(panel.subjects().iter().map(|s| vec![w; s.rows.len()]).collect())
    }

    pub fn check(&self, panel: &Panel) -> Result<()> {
        if self.0.len() != panel.len() {
            return Err(Error::InvalidWeights(format!(
                "{} subjects weighted, panel has {}",
                self.0.len(),
                panel.len()
            )));
        }
        for (w, s) in self.0.iter().zip(panel.subjects()) {
            if w.len() != s.rows.len() {
                return Err(Error::InvalidWeights(format!(
                    "subject {}: {} weights for {} rows",
                    s.id,
                    w.len(),
                    s.rows.len()
                )));
            }
            if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::InvalidWeights(format!(
                    "subject {}: non-positive weight {bad}",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, subject: usize, row: usize) -> f64 {
        self.0[subject][row]
    }
}
