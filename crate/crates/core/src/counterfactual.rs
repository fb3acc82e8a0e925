//! Counterfactual no-treatment covariate paths for treated person-time.
//!
//! The increment model is fitted on untreated increments only, then every
//! treated subject's covariates are run forward from its last untreated state
//! until exit, as if treatment had never started.

use std::io::Write;

use crate::error::{Error, Result};
use crate::flim::{fit_flim_filtered, FlimColumns, FlimFit, FlimSpec};
use crate::panel::{fmt_num, risk_set, Panel, RiskMode, SubjectRecord};

/// When a treatment start begins to act on the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreatmentTiming {
    /// The covariate recorded in the start interval precedes the start
    /// decision; treatment acts from the next interval. Increments
    /// `t-1 -> t` with `B(t-1) = 0` are untreated, and the counterfactual
    /// path is seeded at `S`.
    #[default]
    Lagged,
    /// The covariate in the start interval may already reflect treatment.
    /// Only increments with `B(t-1) = B(t) = 0` are untreated, and the path
    /// is seeded at `S - 1`.
    Concurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualConfig {
    pub flim: FlimSpec,
    pub timing: TreatmentTiming,
}

impl TreatmentTiming {
    /// Treated subjects whose covariates may differ from their untreated
    /// path in interval `t`. Under lagged timing the start interval is on
    /// treatment with `L = L⁰`, so it is averaged in.
    pub fn risk_mode(self) -> RiskMode {
        match self {
            TreatmentTiming::Lagged => RiskMode::OnTreatment,
            TreatmentTiming::Concurrent => RiskMode::TreatedAtt,
        }
    }
}

impl CounterfactualConfig {
    pub fn for_panel(panel: &Panel) -> Self {
        CounterfactualConfig {
            flim: FlimSpec::for_panel(panel),
            timing: TreatmentTiming::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSource {
    /// Untreated value taken from the data (the seed of the path).
    Observed,
    Counterfactual,
}

/// Counterfactual path of one treated subject over `start..=exit`.
#[derive(Debug, Clone, PartialEq)]
pub struct CfTrajectory {
    pub start: u32,
    pub values: Vec<Vec<f64>>,
    pub source: Vec<CellSource>,
}

impl CfTrajectory {
    pub fn at(&self, t: u32) -> Option<&[f64]> {
        t.checked_sub(self.start)
            .and_then(|k| self.values.get(k as usize))
            .map(Vec::as_slice)
    }
}

#[derive(Debug, Clone)]
pub struct CfPanel {
    pub base: Panel,
    pub flim: FlimFit,
    pub variable_names: Vec<String>,
    /// Parallel to `base.subjects()`; `None` for never-treated subjects.
    pub trajectories: Vec<Option<CfTrajectory>>,
    pub timing: TreatmentTiming,
    columns: Vec<usize>,
}

impl CfPanel {
    /// Imputed no-treatment covariates `L⁰(t)` of subject `i`.
    pub fn l0(&self, i: usize, t: u32) -> Option<&[f64]> {
        self.trajectories[i].as_ref()?.at(t)
    }

    /// Observed covariates `L¹(t) = L(t)` on the same cells as [`Self::l0`].
    pub fn l1(&self, i: usize, t: u32) -> Option<Vec<f64>> {
        self.l0(i, t)?;
        let row = self.base.subjects()[i].row_at(t)?;
        Some(self.columns.iter().map(|&c| row.covariates[c]).collect())
    }

    pub fn n_treated(&self) -> usize {
        self.trajectories.iter().filter(|t| t.is_some()).count()
    }

    /// Long CSV `id, t, treat, variable, value, provenance`; treated rows get
    /// an extra `counterfactual` line per variable.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["id", "t", "treat", "variable", "value", "provenance"])?;
        for (i, s) in self.base.subjects().iter().enumerate() {
            for r in &s.rows {
                for (j, name) in self.variable_names.iter().enumerate() {
                    let treat = (r.treated as u8).to_string();
                    w.write_record([
                        s.id.as_str(),
                        &r.t.to_string(),
                        &treat,
                        name,
                        &fmt_num(r.covariates[self.columns[j]]),
                        "observed",
                    ])?;
                    if let Some(v) = self.l0(i, r.t) {
                        w.write_record([
                            s.id.as_str(),
                            &r.t.to_string(),
                            &treat,
                            name,
                            &fmt_num(v[j]),
                            "counterfactual",
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn impute_counterfactual(panel: &Panel, config: &CounterfactualConfig) -> Result<CfPanel> {
    panel.require_contiguous()?;
    let spec = &config.flim;
    let cols = FlimColumns::resolve(panel, &spec.responses, &spec.adjustments)?;
    let timing = config.timing;
    let measured_only = spec.measured_only;
    let flim = fit_flim_filtered(panel, spec, |_, prev, cur| {
        let untreated = match timing {
            TreatmentTiming::Lagged => !prev.treated,
            TreatmentTiming::Concurrent => !prev.treated && !cur.treated,
        };
        untreated
            && cols.responses.iter().all(|&c| {
                prev.covariates[c].is_finite()
                    && cur.covariates[c].is_finite()
                    && (!measured_only || (prev.observed[c] && cur.observed[c]))
            })
    })?;
    let trajectories = panel
        .subjects()
        .iter()
        .map(|s| trajectory(s, &flim, &cols, timing))
        .collect::<Result<Vec<_>>>()?;
    Ok(CfPanel {
        base: panel.clone(),
        variable_names: spec.responses.clone(),
        flim,
        trajectories,
        timing,
        columns: cols.responses.clone(),
    })
}

fn trajectory(
    s: &SubjectRecord,
    flim: &FlimFit,
    cols: &FlimColumns,
    timing: TreatmentTiming,
) -> Result<Option<CfTrajectory>> {
    let Some(start) = s.start() else {
        return Ok(None);
    };
    let adj = cols.adjustments(s);
    // (interval of the seed state, first interval that needs a model step)
    let (seed_t, first_step) = match timing {
        TreatmentTiming::Lagged => (start, start + 1),
        TreatmentTiming::Concurrent if start == 0 => (0, 1),
        TreatmentTiming::Concurrent => (start - 1, start),
    };
    let seed_row = s
        .row_at(seed_t)
        .ok_or_else(|| Error::NoBaselineRow { id: s.id.clone() })?;
    let mut state = cols.state(seed_row);
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue {
            id: s.id.clone(),
            column: "covariates".into(),
            value: format!("missing untreated value at t={seed_t}"),
        });
    }
    let mut values = Vec::new();
    let mut source = Vec::new();
    if seed_t == start {
        values.push(state.clone());
        source.push(CellSource::Observed);
    }
    for t in first_step..=s.exit() {
        // Without responses there is nothing to model.
        let beta = match flim.effective_beta(t) {
            Some(b) => b,
            None if flim.variable_names.is_empty() => &[],
            None => return Err(Error::InsufficientUntreatedData { t }),
        };
        state = flim.advance(beta, &state, &adj);
        values.push(state.clone());
        source.push(CellSource::Counterfactual);
    }
    Ok(Some(CfTrajectory { start, values, source }))
}

/// Treated-set averages of observed and counterfactual covariates over the
/// risk set given by [`TreatmentTiming::risk_mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct TreatedAverages {
    pub t_max: u32,
    pub variable_names: Vec<String>,
    /// Size of the treated risk set `R(t)`.
    pub r: Vec<usize>,
    pub a_hat: Vec<Option<Vec<f64>>>,
    pub b_hat: Vec<Option<Vec<f64>>>,
}

impl TreatedAverages {
    /// `â(t) - b̂(t)`, zero where nobody treated is at risk.
    pub fn difference(&self, t: u32) -> Vec<f64> {
        match (&self.a_hat[t as usize], &self.b_hat[t as usize]) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x - y).collect(),
            _ => vec![0.0; self.variable_names.len()],
        }
    }
}

pub fn treated_averages(cf: &CfPanel) -> TreatedAverages {
    let t_max = cf.base.t_max();
    let m = cf.variable_names.len();
    let mut out = TreatedAverages {
        t_max,
        variable_names: cf.variable_names.clone(),
        r: Vec::with_capacity(t_max as usize + 1),
        a_hat: Vec::with_capacity(t_max as usize + 1),
        b_hat: Vec::with_capacity(t_max as usize + 1),
    };
    for t in 0..=t_max {
        let rs = risk_set(&cf.base, t, cf.timing.risk_mode());
        let r = rs.size();
        out.r.push(r);
        if r == 0 {
            out.a_hat.push(None);
            out.b_hat.push(None);
            continue;
        }
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        for &i in &rs.members {
            let l1 = cf.l1(i, t).expect("treated subject at risk has a path");
            let l0 = cf.l0(i, t).expect("treated subject at risk has a path");
            for j in 0..m {
                a[j] += l1[j];
                b[j] += l0[j];
            }
        }
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v /= r as f64);
        out.a_hat.push(Some(a));
        out.b_hat.push(Some(b));
    }
    out
}

/// Copy of the base panel with treated person-time carrying `L⁰` values.
pub fn build_manipulated_panel(cf: &CfPanel) -> Panel {
    let subjects = cf
        .base
        .subjects()
        .iter()
        .zip(&cf.trajectories)
        .map(|(s, traj)| {
            let mut s = s.clone();
            if let Some(traj) = traj {
                for r in s.rows.iter_mut().filter(|r| r.t >= traj.start) {
                    let v = traj.at(r.t).expect("path covers treated rows");
                    for (j, &c) in cf.columns.iter().enumerate() {
                        r.covariates[c] = v[j];
                    }
                }
            }
            s
        })
        .collect();
    cf.base
        .with_subjects(subjects)
        .expect("covariate replacement preserves panel invariants")
}
