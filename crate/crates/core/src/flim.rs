//! Linear increments model for longitudinal covariates.
//!
//! For each interval `t` the increment of the response vector is regressed on
//! the previous state, `ΔK(t) = u(t-1) β(t) + ε(t)`, with
//! `u(t-1) = (1, K(t-1), c)`, using only subjects whose increment is observed.
//! No structure is imposed across intervals. Missing states are rebuilt by
//! running the fitted increments forward from the last known value and
//! snapping back to the data wherever a value is observed.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{add_outer, SymFactor};
use crate::panel::{fmt_num, Panel, Row, SubjectRecord};

pub const CONSTANT: &str = "(const)";

#[derive(Debug, Clone, PartialEq)]
pub struct FlimSpec {
    pub responses: Vec<String>,
    pub adjustments: Vec<String>,
    pub constant: bool,
    /// Fit only increments whose endpoints were both measured, not carried.
    pub measured_only: bool,
}

impl FlimSpec {
    pub fn new(responses: Vec<String>, adjustments: Vec<String>) -> Self {
        FlimSpec {
            responses,
            adjustments,
            constant: true,
            measured_only: false,
        }
    }

    /// All covariates as responses, all baselines as adjustments.
    pub fn for_panel(panel: &Panel) -> Self {
        FlimSpec::new(panel.covariate_names().to_vec(), panel.baseline_names().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlimFit {
    pub variable_names: Vec<String>,
    pub adjustment_names: Vec<String>,
    pub constant: bool,
    /// `betas[t]`: row-major `regressors × responses` matrix, `None` where the
    /// interval was not estimable. Index 0 is always `None`.
    pub betas: Vec<Option<Vec<f64>>>,
    pub fitted_counts: Vec<usize>,
}

impl FlimFit {
    pub fn regressor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.constant {
            names.push(CONSTANT.to_string());
        }
        names.extend(self.variable_names.iter().cloned());
        names.extend(self.adjustment_names.iter().cloned());
        names
    }

    pub fn n_regressors(&self) -> usize {
        self.constant as usize + self.variable_names.len() + self.adjustment_names.len()
    }

    pub fn t_max(&self) -> u32 {
        self.betas.len().saturating_sub(1) as u32
    }

    pub fn non_estimable(&self) -> Vec<u32> {
        (1..self.betas.len())
            .filter(|&t| self.betas[t].is_none())
            .map(|t| t as u32)
            .collect()
    }

    /// The estimate for `t`, or the nearest earlier estimable one.
    pub fn effective_beta(&self, t: u32) -> Option<&[f64]> {
        let t = (t as usize).min(self.betas.len().saturating_sub(1));
        (1..=t).rev().find_map(|u| self.betas[u].as_deref())
    }

    /// One model step: `state + u(state) β(t)`.
    pub fn advance(&self, beta: &[f64], state: &[f64], adjustments: &[f64]) -> Vec<f64> {
        let m = self.variable_names.len();
        let u = self.regressors(state, adjustments);
        (0..m)
            .map(|j| state[j] + u.iter().enumerate().map(|(r, uv)| uv * beta[r * m + j]).sum::<f64>())
            .collect()
    }

    fn regressors(&self, state: &[f64], adjustments: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.n_regressors());
        if self.constant {
            u.push(1.0);
        }
        u.extend_from_slice(state);
        u.extend_from_slice(adjustments);
        u
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["t", "response", "regressor", "coefficient"])?;
        let regs = self.regressor_names();
        let m = self.variable_names.len();
        for (t, beta) in self.betas.iter().enumerate() {
            let Some(beta) = beta else { continue };
            for (j, resp) in self.variable_names.iter().enumerate() {
                for (r, reg) in regs.iter().enumerate() {
                    w.write_record([t.to_string(), resp.clone(), reg.clone(), fmt_num(beta[r * m + j])])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Column positions of the model variables within a panel.
#[derive(Debug, Clone)]
pub(crate) struct FlimColumns {
    pub responses: Vec<usize>,
    pub adjustments: Vec<usize>,
}

impl FlimColumns {
    pub fn resolve(panel: &Panel, responses: &[String], adjustments: &[String]) -> Result<Self> {
        Ok(FlimColumns {
            responses: responses
                .iter()
                .map(|r| panel.covariate_index(r))
                .collect::<Result<_>>()?,
            adjustments: adjustments
                .iter()
                .map(|a| panel.baseline_index(a))
                .collect::<Result<_>>()?,
        })
    }

    pub fn state(&self, row: &Row) -> Vec<f64> {
        self.responses.iter().map(|&c| row.covariates[c]).collect()
    }

    pub fn adjustments(&self, s: &SubjectRecord) -> Vec<f64> {
        self.adjustments.iter().map(|&c| s.baseline[c]).collect()
    }
}

/// Fits the model on increments whose endpoints are both present (and, with
/// `measured_only`, both measured).
pub fn fit_flim(panel: &Panel, spec: &FlimSpec) -> Result<FlimFit> {
    let cols = FlimColumns::resolve(panel, &spec.responses, &spec.adjustments)?;
    let measured_only = spec.measured_only;
    fit_flim_filtered(panel, spec, |_, prev, cur| {
        cols.responses.iter().all(|&c| {
            prev.covariates[c].is_finite()
                && cur.covariates[c].is_finite()
                && (!measured_only || (prev.observed[c] && cur.observed[c]))
        })
    })
}

/// Fits the model on the increments selected by `usable(subject, prev, cur)`.
pub fn fit_flim_filtered<F>(panel: &Panel, spec: &FlimSpec, usable: F) -> Result<FlimFit>
where
    F: Fn(&SubjectRecord, &Row, &Row) -> bool,
{
    let cols = FlimColumns::resolve(panel, &spec.responses, &spec.adjustments)?;
    let mut fit = FlimFit {
        variable_names: spec.responses.clone(),
        adjustment_names: spec.adjustments.clone(),
        constant: spec.constant,
        betas: vec![None; panel.t_max() as usize + 1],
        fitted_counts: vec![0; panel.t_max() as usize + 1],
    };
    let m = spec.responses.len();
    let q = fit.n_regressors();
    if m == 0 {
        return Ok(fit);
    }
    let mut utu = vec![vec![0.0; q * q]; fit.betas.len()];
    let mut utd = vec![vec![0.0; q * m]; fit.betas.len()];
    for s in panel.subjects() {
        let adj = cols.adjustments(s);
        for pair in s.rows.windows(2) {
            let (prev, cur) = (&pair[0], &pair[1]);
            if cur.t != prev.t + 1 || !usable(s, prev, cur) {
                continue;
            }
            let t = cur.t as usize;
            let state = cols.state(prev);
            let u = fit.regressors(&state, &adj);
            add_outer(&mut utu[t], &u, 1.0);
            for (j, &c) in cols.responses.iter().enumerate() {
                let d = cur.covariates[c] - prev.covariates[c];
                for r in 0..q {
                    utd[t][r * m + j] += u[r] * d;
                }
            }
            fit.fitted_counts[t] += 1;
        }
    }
    for t in 1..fit.betas.len() {
        if fit.fitted_counts[t] < q {
            continue;
        }
        let factor = SymFactor::new(&utu[t], q);
        if factor.rank() < q {
            continue;
        }
        let mut beta = vec![0.0; q * m];
        for j in 0..m {
            let rhs: Vec<f64> = (0..q).map(|r| utd[t][r * m + j]).collect();
            for (r, v) in factor.solve(&rhs).into_iter().enumerate() {
                beta[r * m + j] = v;
            }
        }
        fit.betas[t] = Some(beta);
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Observed,
    Imputed,
}

/// Per-subject stopping rule for imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Horizon {
    /// Up to the subject's event or censoring interval.
    #[default]
    Exit,
    /// Up to `min(exit, t)`.
    Until(u32),
}

impl Horizon {
    pub fn last(&self, s: &SubjectRecord) -> u32 {
        match self {
            Horizon::Exit => s.exit(),
            Horizon::Until(t) => s.exit().min(*t),
        }
    }
}

/// Panel with every response cell filled by the iterative estimate.
#[derive(Debug, Clone)]
pub struct ImputedPanel {
    pub base: Panel,
    pub variable_names: Vec<String>,
    /// `values[subject][row][variable]` for rows up to the horizon.
    pub values: Vec<Vec<Vec<f64>>>,
    pub provenance: Vec<Vec<Vec<Provenance>>>,
}

pub fn impute_hypothetical(fit: &FlimFit, panel: &Panel, horizon: Horizon) -> Result<ImputedPanel> {
    panel.require_contiguous()?;
    let cols = FlimColumns::resolve(panel, &fit.variable_names, &fit.adjustment_names)?;
    let mut values = Vec::with_capacity(panel.len());
    let mut provenance = Vec::with_capacity(panel.len());
    for s in panel.subjects() {
        let first = &s.rows[0];
        if first.t != 0 || cols.responses.iter().any(|&c| !first.observed[c]) {
            return Err(Error::NoBaselineRow { id: s.id.clone() });
        }
        let adj = cols.adjustments(s);
        let last = horizon.last(s);
        let mut vals: Vec<Vec<f64>> = vec![cols.state(first)];
        let mut prov = vec![vec![Provenance::Observed; cols.responses.len()]];
        for r in s.rows.iter().skip(1).take_while(|r| r.t <= last) {
            let prev = vals.last().expect("seeded");
            let all_observed = cols.responses.iter().all(|&c| r.observed[c]);
            let model = if all_observed {
                None
            } else {
                let beta = fit.effective_beta(r.t).ok_or_else(|| Error::NonEstimableGap {
                    id: s.id.clone(),
                    t: r.t,
                })?;
                Some(fit.advance(beta, prev, &adj))
            };
            let mut next = Vec::with_capacity(cols.responses.len());
            let mut p = Vec::with_capacity(cols.responses.len());
            for (j, &c) in cols.responses.iter().enumerate() {
                if r.observed[c] {
                    next.push(r.covariates[c]);
                    p.push(Provenance::Observed);
                } else {
                    next.push(model.as_ref().expect("model step computed")[j]);
                    p.push(Provenance::Imputed);
                }
            }
            vals.push(next);
            prov.push(p);
        }
        values.push(vals);
        provenance.push(prov);
    }
    Ok(ImputedPanel {
        base: panel.clone(),
        variable_names: fit.variable_names.clone(),
        values,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::SubjectRecord;

    fn subj(id: &str, vals: &[Option<f64>]) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            baseline: vec![],
            rows: vals
                .iter()
                .enumerate()
                .map(|(t, v)| Row {
                    t: t as u32,
                    treated: false,
                    covariates: vec![v.unwrap_or(f64::NAN)],
                    observed: vec![v.is_some()],
                    event: false,
                    censored: false,
                })
                .collect(),
        }
    }

    fn no_constant() -> FlimSpec {
        FlimSpec {
            constant: false,
            ..FlimSpec::new(vec!["K".into()], vec![])
        }
    }

    #[test]
    fn scalar_least_squares_by_hand() {
        let p = Panel::new(
            vec!["K".into()],
            vec![],
            vec![subj("1", &[Some(1.0), Some(2.0)]), subj("2", &[Some(2.0), Some(4.0)])],
        )
        .unwrap();
        let fit = fit_flim(&p, &no_constant()).unwrap();
        assert_eq!(fit.betas[1].as_deref(), Some(&[1.0][..]));
        assert_eq!(fit.fitted_counts[1], 2);
    }

    #[test]
    fn zero_increments_give_zero_coefficients() {
        let p = Panel::new(
            vec!["K".into()],
            vec![],
            vec![
                subj("1", &[Some(1.0), Some(1.0), Some(1.0)]),
                subj("2", &[Some(3.0), Some(3.0), Some(3.0)]),
                subj("3", &[Some(5.0), Some(5.0), Some(5.0)]),
            ],
        )
        .unwrap();
        let fit = fit_flim(&p, &FlimSpec::new(vec!["K".into()], vec![])).unwrap();
        for t in 1..=2 {
            assert!(fit.betas[t].as_ref().unwrap().iter().all(|b| b.abs() < 1e-14));
        }
    }

    #[test]
    fn one_step_imputation_by_hand() {
        let fit = FlimFit {
            variable_names: vec!["K".into()],
            adjustment_names: vec![],
            constant: false,
            betas: vec![None, Some(vec![1.0])],
            fitted_counts: vec![0, 5],
        };
        let p = Panel::new(vec!["K".into()], vec![], vec![subj("1", &[Some(2.0), None])]).unwrap();
        let imp = impute_hypothetical(&fit, &p, Horizon::Exit).unwrap();
        assert_eq!(imp.values[0][1], vec![4.0]);
        assert_eq!(imp.provenance[0][1], vec![Provenance::Imputed]);
    }

    #[test]
    fn observation_overrides_model_state() {
        let fit = FlimFit {
            variable_names: vec!["K".into()],
            adjustment_names: vec![],
            constant: false,
            betas: vec![None, Some(vec![1.0]), Some(vec![0.5])],
            fitted_counts: vec![0, 5, 5],
        };
        let p = Panel::new(vec!["K".into()], vec![], vec![subj("1", &[Some(2.0), None, Some(9.0)])]).unwrap();
        let imp = impute_hypothetical(&fit, &p, Horizon::Exit).unwrap();
        assert_eq!(imp.values[0][2], vec![9.0]);
        assert_eq!(imp.provenance[0][2], vec![Provenance::Observed]);
    }

    #[test]
    fn non_estimable_intervals_reuse_earlier_estimate() {
        let fit = FlimFit {
            variable_names: vec!["K".into()],
            adjustment_names: vec![],
            constant: false,
            betas: vec![None, Some(vec![1.0]), None],
            fitted_counts: vec![0, 5, 0],
        };
        assert_eq!(fit.non_estimable(), vec![2]);
        assert_eq!(fit.effective_beta(2), Some(&[1.0][..]));
        let gap = FlimFit {
            betas: vec![None, None],
            ..fit.clone()
        };
        let p = Panel::new(vec!["K".into()], vec![], vec![subj("1", &[Some(2.0), None])]).unwrap();
        assert!(matches!(
            impute_hypothetical(&gap, &p, Horizon::Exit),
            Err(Error::NonEstimableGap { t: 1, .. })
        ));
    }

    #[test]
    fn too_few_increments_are_not_estimable() {
        let p = Panel::new(vec!["K".into()], vec![], vec![subj("1", &[Some(1.0), Some(2.0)])]).unwrap();
        let fit = fit_flim(&p, &FlimSpec::new(vec!["K".into()], vec![])).unwrap();
        assert_eq!(fit.fitted_counts[1], 1);
        assert!(fit.betas[1].is_none());
    }

    #[test]
    fn horizon_truncates_imputation() {
        let fit = FlimFit {
            variable_names: vec!["K".into()],
            adjustment_names: vec![],
            constant: false,
            betas: vec![None, Some(vec![1.0]), Some(vec![1.0])],
            fitted_counts: vec![0, 5, 5],
        };
        let p = Panel::new(vec!["K".into()], vec![], vec![subj("1", &[Some(1.0), None, None])]).unwrap();
        let imp = impute_hypothetical(&fit, &p, Horizon::Until(1)).unwrap();
        assert_eq!(imp.values[0].len(), 2);
        let full = impute_hypothetical(&fit, &p, Horizon::Exit).unwrap();
        assert_eq!(full.values[0][2], vec![4.0]);
    }
}
