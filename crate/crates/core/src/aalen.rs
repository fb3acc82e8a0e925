//! Aalen additive hazards regression on the interval grid.
//!
//! At every interval with at least one event the coefficient increment is the
//! weighted least-squares solution `dB(t) = (XᵀWX)⁻¹ XᵀW dN(t)` over the rows
//! at risk. Columns that are aliased at an interval (for example the
//! treatment column before anyone is treated) get a zero increment there and
//! are listed in [`AdditiveFit::diagnostics`].

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::curve::CumulativeCurve;
use crate::design::{Design, Formula, RowWeights};
use crate::error::{Error, Result};
use crate::linalg::{add_outer, SymFactor};
use crate::panel::{fmt_num, Panel};

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// Column had a rank-deficient at-risk design at `t`; increment set to 0.
    Aliased { t: u32, coefficient: String },
}

#[derive(Debug, Clone)]
pub struct AdditiveFit {
    pub coef_names: Vec<String>,
    pub t_max: u32,
    /// Intervals at which increments were estimated.
    pub times: Vec<u32>,
    pub increments: Vec<Vec<f64>>,
    /// Optional-variation variance of each increment (diagonal only).
    pub increment_var: Vec<Vec<f64>>,
    pub cumulative: Vec<Vec<f64>>,
    /// Subject-clustered sandwich covariance of the cumulative coefficients,
    /// row-major `p * p` per estimated interval.
    pub robust_cov: Vec<Vec<f64>>,
    pub at_risk: Vec<usize>,
    pub n_events: usize,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn fit_additive(panel: &Panel, formula: &Formula, weights: Option<&RowWeights>) -> Result<AdditiveFit> {
    panel.require_contiguous()?;
    if let Some(w) = weights {
        w.check(panel)?;
    }
    let design = Design::resolve(panel, formula, true)?;
    let p = design.width();
    let subjects = panel.subjects();
    let mut psi = vec![vec![0.0; p]; subjects.len()];
    let mut fit = AdditiveFit {
        coef_names: design.names.clone(),
        t_max: panel.t_max(),
        times: Vec::new(),
        increments: Vec::new(),
        increment_var: Vec::new(),
        cumulative: Vec::new(),
        robust_cov: Vec::new(),
        at_risk: Vec::new(),
        n_events: 0,
        diagnostics: Vec::new(),
    };
    let mut running = vec![0.0; p];
    let mut x = vec![0.0; p];
    let mut rows_x: Vec<f64> = Vec::new();

    for (t, rows) in panel.rows_by_interval().into_iter().enumerate() {
        let t = t as u32;
        let events = rows.iter().filter(|&&(i, k)| subjects[i].rows[k].event).count();
        if events == 0 {
            continue;
        }
        let mut xtwx = vec![0.0; p * p];
        let mut xtwdn = vec![0.0; p];
        let mut event_info = vec![0.0; p * p];
        rows_x.clear();
        for &(i, k) in &rows {
            let s = &subjects[i];
            let r = &s.rows[k];
            design.fill(s, r, &mut x);
            let w = weights.map_or(1.0, |w| w.get(i, k));
            add_outer(&mut xtwx, &x, w);
            if r.event {
                for (acc, xv) in xtwdn.iter_mut().zip(&x) {
                    *acc += w * xv;
                }
                add_outer(&mut event_info, &x, w * w);
            }
            rows_x.extend_from_slice(&x);
        }
        let factor = SymFactor::new(&xtwx, p);
        for (j, a) in factor.aliased().iter().enumerate() {
            if *a {
                fit.diagnostics.push(Diagnostic::Aliased {
                    t,
                    coefficient: design.names[j].clone(),
                });
            }
        }
        let inc = factor.solve(&xtwdn);
        let inv = factor.inverse();
        let var: Vec<f64> = (0..p)
            .map(|j| {
                let mut v = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        v += inv[j * p + a] * event_info[a * p + b] * inv[b * p + j];
                    }
                }
                v.max(0.0)
            })
            .collect();

        for (row_no, &(i, k)) in rows.iter().enumerate() {
            let xi = &rows_x[row_no * p..(row_no + 1) * p];
            let dn = if subjects[i].rows[k].event { 1.0 } else { 0.0 };
            let w = weights.map_or(1.0, |w| w.get(i, k));
            let resid = w * (dn - xi.iter().zip(&inc).map(|(a, b)| a * b).sum::<f64>());
            if resid == 0.0 {
                continue;
            }
            for a in 0..p {
                let c: f64 = (0..p).map(|b| inv[a * p + b] * xi[b]).sum();
                psi[i][a] += c * resid;
            }
        }
        let mut cov = vec![0.0; p * p];
        for ps in &psi {
            add_outer(&mut cov, ps, 1.0);
        }

        for (acc, d) in running.iter_mut().zip(&inc) {
            *acc += d;
        }
        fit.times.push(t);
        fit.increments.push(inc);
        fit.increment_var.push(var);
        fit.cumulative.push(running.clone());
        fit.robust_cov.push(cov);
        fit.at_risk.push(rows.len());
        fit.n_events += events;
    }
    Ok(fit)
}

impl AdditiveFit {
    pub fn coef_index(&self, name: &str) -> Result<usize> {
        self.coef_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    /// Index of the last estimated interval at or before `t`.
    fn last_at_or_before(&self, t: u32) -> Option<usize> {
        match self.times.binary_search(&t) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }

    /// Increment of a coefficient at interval `t` (zero if not estimated there).
    pub fn increment_at(&self, j: usize, t: u32) -> f64 {
        self.times
            .binary_search(&t)
            .map(|i| self.increments[i][j])
            .unwrap_or(0.0)
    }

    /// Cumulative coefficient on the full grid with robust variance.
    pub fn coefficient_curve(&self, name: &str) -> Result<CumulativeCurve> {
        let j = self.coef_index(name)?;
        let p = self.coef_names.len();
        let mut curve = CumulativeCurve::zeros(name, self.t_max);
        let mut var = vec![0.0; curve.values.len()];
        for t in 0..=self.t_max {
            if let Some(i) = self.last_at_or_before(t) {
                curve.values[t as usize] = self.cumulative[i][j];
                var[t as usize] = self.robust_cov[i][j * p + j].max(0.0);
            }
        }
        curve.variance = Some(var);
        Ok(curve)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["t", "coefficient", "increment", "cumulative", "robust_se"])?;
        let p = self.coef_names.len();
        for (i, t) in self.times.iter().enumerate() {
            for (j, name) in self.coef_names.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    name.clone(),
                    fmt_num(self.increments[i][j]),
                    fmt_num(self.cumulative[i][j]),
                    fmt_num(self.robust_cov[i][j * p + j].max(0.0).sqrt()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Step-function value and robust standard error of a cumulative coefficient.
pub fn curve_at(fit: &AdditiveFit, coefficient: &str, t: u32) -> Result<(f64, f64)> {
    let j = fit.coef_index(coefficient)?;
    let p = fit.coef_names.len();
    Ok(match fit.last_at_or_before(t) {
        Some(i) => (fit.cumulative[i][j], fit.robust_cov[i][j * p + j].max(0.0).sqrt()),
        None => (0.0, 0.0),
    })
}

/// Weight function for the slope test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlopeWeight {
    /// Number at risk in the interval.
    #[default]
    RiskSetSize,
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeTestResult {
    pub coefficient: String,
    pub statistic: f64,
    pub p_value: f64,
}

/// Weighted test that a regression function is identically zero.
pub fn slope_test(fit: &AdditiveFit, coefficient: &str, weighting: SlopeWeight) -> Result<SlopeTestResult> {
    let j = fit.coef_index(coefficient)?;
    if fit.times.is_empty() {
        return Err(Error::NoEvents);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..fit.times.len() {
        let w = match weighting {
            SlopeWeight::RiskSetSize => fit.at_risk[i] as f64,
            SlopeWeight::Unit => 1.0,
        };
        num += w * fit.increments[i][j];
        den += w * w * fit.increment_var[i][j];
    }
    let statistic = if den > 0.0 { num / den.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    let p_value = (2.0 * normal.sf(statistic.abs())).clamp(0.0, 1.0);
    Ok(SlopeTestResult {
        coefficient: coefficient.to_string(),
        statistic,
        p_value,
    })
}
