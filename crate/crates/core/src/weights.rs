//! Stabilized inverse probability of treatment and censoring weights.
//!
//! Both the treatment-start and the censoring process are modelled by pooled
//! logistic regression over person-intervals. Numerators use baseline
//! covariates only; denominators add the time-varying covariates.

use std::io::Write;

use crate::aalen::{fit_additive, AdditiveFit};
use crate::curve::quantile;
use crate::design::{Design, Formula, RowWeights};
use crate::error::{Error, Result};
use crate::linalg::{add_outer, SymFactor};
use crate::panel::{fmt_num, Panel, Row, SubjectRecord};

pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// Log odds ratio per standard deviation beyond which a fit is separated.
pub const SEPARATION_LIMIT: f64 = 10.0;

/// Which binary process a pooled logistic model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogisticOutcome {
    /// Rows not yet treated in the previous interval; outcome `B(t)`.
    TreatmentStart,
    /// Rows before the last grid interval that did not end in an event;
    /// outcome is loss to follow-up after the interval.
    Censoring,
}

/// Piecewise-constant baseline in calendar time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeBasis {
    None,
    /// Indicators for the 2nd, 3rd and 4th quarter of `0..=t_max`.
    #[default]
    Quarters,
}

impl TimeBasis {
    fn names(self) -> Vec<String> {
        match self {
            TimeBasis::None => Vec::new(),
            TimeBasis::Quarters => (2..=4).map(|q| format!("quarter{q}")).collect(),
        }
    }

    fn fill(self, t: u32, t_max: u32, out: &mut [f64]) {
        if let TimeBasis::Quarters = self {
            let q = ((4 * t as u64) / (t_max as u64 + 1)).min(3) as usize;
            for (k, v) in out.iter_mut().enumerate() {
                *v = if q == k + 1 { 1.0 } else { 0.0 };
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PooledLogisticFit {
    pub outcome: LogisticOutcome,
    /// Names of the retained columns, aligned with `coefficients`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Columns dropped for having no variation in the modelled rows.
    pub dropped: Vec<String>,
    pub iterations: usize,
    /// Max-norm of the per-row mean score at the solution.
    pub gradient_norm: f64,
    pub log_likelihood: f64,
    pub n_rows: usize,
    pub n_positive: usize,
    design: Design,
    basis: TimeBasis,
    grid_max: u32,
    keep: Vec<usize>,
}

impl PooledLogisticFit {
    fn full_row(&self, s: &SubjectRecord, r: &Row, buf: &mut Vec<f64>) {
        full_row(&self.design, self.basis, self.grid_max, s, r, buf);
    }

    /// Fitted probability for a person-interval.
    pub fn predict(&self, s: &SubjectRecord, r: &Row) -> f64 {
        let mut buf = Vec::new();
        self.full_row(s, r, &mut buf);
        let eta: f64 = self.keep.iter().zip(&self.coefficients).map(|(&c, b)| buf[c] * b).sum();
        expit(eta)
    }
}

fn full_row(design: &Design, basis: TimeBasis, grid_max: u32, s: &SubjectRecord, r: &Row, buf: &mut Vec<f64>) {
    let p = design.width();
    let q = basis.names().len();
    buf.clear();
    buf.resize(p + q, 0.0);
    design.fill(s, r, &mut buf[..p]);
    basis.fill(r.t, grid_max, &mut buf[p..]);
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(row index, outcome)` pairs a model of `outcome` is fitted on.
fn model_rows(s: &SubjectRecord, outcome: LogisticOutcome, grid_max: u32) -> Vec<(usize, bool)> {
    match outcome {
        LogisticOutcome::TreatmentStart => s
            .rows
            .iter()
            .enumerate()
            .take_while(|(k, _)| *k == 0 || !s.rows[k - 1].treated)
            .map(|(k, r)| (k, r.treated))
            .collect(),
        LogisticOutcome::Censoring => s
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.t < grid_max && !r.event)
            .map(|(k, r)| (k, r.censored))
            .collect(),
    }
}

fn log_lik(x: &[f64], y: &[bool], beta: &[f64]) -> f64 {
    let p = beta.len();
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let eta: f64 = x[i * p..(i + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum();
            // log p = -log(1 + e^-eta); log(1 - p) = -log(1 + e^eta)
            if yi {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Maximum-likelihood pooled logistic regression by damped Newton steps.
///
/// `formula.treatment` adds the current treatment indicator as a regressor.
pub fn fit_pooled_logistic(
    panel: &Panel,
    outcome: LogisticOutcome,
    formula: &Formula,
    basis: TimeBasis,
) -> Result<PooledLogisticFit> {
    let design = Design::resolve(panel, formula, true)?;
    let grid_max = panel.t_max();
    let mut all_names = design.names.clone();
    all_names.extend(basis.names());
    let width = all_names.len();

    let mut full = Vec::new();
    let mut y = Vec::new();
    let mut buf = Vec::new();
    for s in panel.subjects() {
        for (k, yk) in model_rows(s, outcome, grid_max) {
            full_row(&design, basis, grid_max, s, &s.rows[k], &mut buf);
            if let Some(c) = buf.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidValue {
                    id: s.id.clone(),
                    column: all_names[c].clone(),
                    value: "missing".into(),
                });
            }
            full.extend_from_slice(&buf);
            y.push(yk);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::PerfectPrediction("no rows to model".into()));
    }
    let n_positive = y.iter().filter(|v| **v).count();
    if n_positive == 0 || n_positive == n {
        return Err(Error::PerfectPrediction("outcome is constant".into()));
    }

    // Intercept always kept; other columns need variation.
    let keep: Vec<usize> = (0..width)
        .filter(|&c| {
            c == 0 || {
                let first = full[c];
                (0..n).any(|i| full[i * width + c] != first)
            }
        })
        .collect();
    let dropped: Vec<String> = (0..width)
        .filter(|c| !keep.contains(c))
        .map(|c| all_names[c].clone())
        .collect();
    let p = keep.len();
    let x: Vec<f64> = (0..n)
        .flat_map(|i| keep.iter().map(move |&c| (i, c)))
        .map(|(i, c)| full[i * width + c])
        .collect();

    let mut beta = vec![0.0; p];
    let rate = n_positive as f64 / n as f64;
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut ll = log_lik(&x, &y, &beta);
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for i in 0..n {
            let xi = &x[i * p..(i + 1) * p];
            let pi = expit(xi.iter().zip(&beta).map(|(a, b)| a * b).sum());
            let resid = if y[i] { 1.0 - pi } else { -pi };
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += resid * v;
            }
            add_outer(&mut info, xi, pi * (1.0 - pi));
        }
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / n as f64;
        if grad_norm < GRADIENT_TOL {
            break;
        }
        if iterations == MAX_ITERATIONS {
            if let Some(j) = separated(&x, &beta, n) {
                return Err(Error::PerfectPrediction(all_names[keep[j]].clone()));
            }
            return Err(Error::NonConvergence {
                iterations,
                gradient: grad_norm,
            });
        }
        iterations += 1;
        let step = SymFactor::new(&info, p).solve(&grad);
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_ll = log_lik(&x, &y, &trial);
            if trial_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                beta = trial;
                ll = trial_ll;
                break;
            }
            scale *= 0.5;
        }
    }
    if let Some(j) = separated(&x, &beta, n) {
        return Err(Error::PerfectPrediction(all_names[keep[j]].clone()));
    }
    Ok(PooledLogisticFit {
        outcome,
        names: keep.iter().map(|&c| all_names[c].clone()).collect(),
        coefficients: beta,
        dropped,
        iterations,
        gradient_norm: grad_norm,
        log_likelihood: ll,
        n_rows: n,
        n_positive,
        design,
        basis,
        grid_max,
        keep,
    })
}

/// Non-intercept column whose coefficient times its standard deviation
/// exceeds [`SEPARATION_LIMIT`].
fn separated(x: &[f64], beta: &[f64], n: usize) -> Option<usize> {
    let p = beta.len();
    (1..p).find(|&j| {
        let mean = (0..n).map(|i| x[i * p + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * p + j] - mean).powi(2)).sum::<f64>() / n as f64;
        (beta[j] * var.sqrt()).abs() > SEPARATION_LIMIT
    })
}

/// Percentile bounds applied to each weight component separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            lower: 0.01,
            upper: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub truncation: Option<Truncation>,
    pub treat_bounds: (f64, f64),
    pub cens_bounds: (f64, f64),
    pub treat_truncated: usize,
    pub cens_truncated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRow {
    pub t: u32,
    pub treat: f64,
    pub cens: f64,
    pub combined: f64,
}

/// Per person-interval weights aligned with a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<WeightRow>>,
    pub report: TruncationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSummary {
    pub mean_treat: f64,
    pub max_treat: f64,
    pub mean_cens: f64,
    pub max_cens: f64,
    pub mean_combined: f64,
    pub max_combined: f64,
    pub truncated: usize,
}

impl WeightSet {
    pub fn combined(&self) -> RowWeights {
        RowWeights(
            self.rows
                .iter()
                .map(|r| r.iter().map(|w| w.combined).collect())
                .collect(),
        )
    }

    pub fn censoring(&self) -> RowWeights {
        RowWeights(self.rows.iter().map(|r| r.iter().map(|w| w.cens).collect()).collect())
    }

    pub fn summary(&self) -> WeightSummary {
        let all = || self.rows.iter().flatten();
        let n = all().count().max(1) as f64;
        let stat = |f: fn(&WeightRow) -> f64| {
            let mean = all().map(f).sum::<f64>() / n;
            let max = all().map(f).fold(0.0, f64::max);
            (mean, max)
        };
        let (mean_treat, max_treat) = stat(|w| w.treat);
        let (mean_cens, max_cens) = stat(|w| w.cens);
        let (mean_combined, max_combined) = stat(|w| w.combined);
        WeightSummary {
            mean_treat,
            max_treat,
            mean_cens,
            max_cens,
            mean_combined,
            max_combined,
            truncated: self.report.treat_truncated + self.report.cens_truncated,
        }
    }

    /// CSV with columns `id, t, w_treat, w_cens, w_comb`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["id", "t", "w_treat", "w_cens", "w_comb"])?;
        for (id, rows) in self.ids.iter().zip(&self.rows) {
            for r in rows {
                w.write_record([
                    id.clone(),
                    r.t.to_string(),
                    fmt_num(r.treat),
                    fmt_num(r.cens),
                    fmt_num(r.combined),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Cumulative stabilized weights.
///
/// Treatment factors accrue on rows at risk of starting treatment and are
/// frozen from the start interval on. The censoring weight of a row covers
/// remaining uncensored through the previous interval.
pub fn stabilized_weights(
    panel: &Panel,
    num_treat: &PooledLogisticFit,
    den_treat: &PooledLogisticFit,
    censoring: Option<(&PooledLogisticFit, &PooledLogisticFit)>,
    truncation: Option<Truncation>,
) -> WeightSet {
    let grid_max = panel.t_max();
    let mut rows = Vec::with_capacity(panel.len());
    for s in panel.subjects() {
        let mut treat = vec![1.0; s.rows.len()];
        let mut running = 1.0;
        let at_risk = model_rows(s, LogisticOutcome::TreatmentStart, grid_max);
        for (k, w) in treat.iter_mut().enumerate() {
            if let Some(&(_, started)) = at_risk.iter().find(|(j, _)| *j == k) {
                let pn = num_treat.predict(s, &s.rows[k]);
                let pd = den_treat.predict(s, &s.rows[k]);
                running *= if started { pn / pd } else { (1.0 - pn) / (1.0 - pd) };
            }
            *w = running;
        }
        let mut cens = vec![1.0; s.rows.len()];
        if let Some((num, den)) = censoring {
            let mut running = 1.0;
            for (k, w) in cens.iter_mut().enumerate() {
                *w = running;
                let r = &s.rows[k];
                if r.t < grid_max && !r.event {
                    running *= (1.0 - num.predict(s, r)) / (1.0 - den.predict(s, r));
                }
            }
        }
        rows.push((treat, cens));
    }

    let (treat_bounds, treat_truncated) = truncate(rows.iter_mut().map(|r| &mut r.0), truncation);
    let (cens_bounds, cens_truncated) = truncate(rows.iter_mut().map(|r| &mut r.1), truncation);
    WeightSet {
        ids: panel.subjects().iter().map(|s| s.id.clone()).collect(),
        rows: panel
            .subjects()
            .iter()
            .zip(rows)
            .map(|(s, (tw, cw))| {
                s.rows
                    .iter()
                    .zip(tw.iter().zip(&cw))
                    .map(|(r, (&treat, &cens))| WeightRow {
                        t: r.t,
                        treat,
                        cens,
                        combined: treat * cens,
                    })
                    .collect()
            })
            .collect(),
        report: TruncationReport {
            truncation,
            treat_bounds,
            cens_bounds,
            treat_truncated,
            cens_truncated,
        },
    }
}

fn truncate<'a>(groups: impl Iterator<Item = &'a mut Vec<f64>>, truncation: Option<Truncation>) -> ((f64, f64), usize) {
    let mut groups: Vec<&mut Vec<f64>> = groups.collect();
    let mut all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if all.is_empty() {
        return ((1.0, 1.0), 0);
    }
    all.sort_by(f64::total_cmp);
    let Some(tr) = truncation else {
        return ((all[0], all[all.len() - 1]), 0);
    };
    let lo = quantile(&all, tr.lower);
    let hi = quantile(&all, tr.upper);
    let mut count = 0;
    for g in groups.iter_mut() {
        for w in g.iter_mut() {
            let c = w.clamp(lo, hi);
            if c != *w {
                count += 1;
                *w = c;
            }
        }
    }
    ((lo, hi), count)
}

/// Model choices for [`fit_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub basis: TimeBasis,
    pub truncation: Option<Truncation>,
    pub censoring: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            basis: TimeBasis::Quarters,
            truncation: Some(Truncation::default()),
            censoring: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightModels {
    pub num_treat: PooledLogisticFit,
    pub den_treat: PooledLogisticFit,
    /// `None` when no censoring is observed before the end of the grid.
    pub censoring: Option<(PooledLogisticFit, PooledLogisticFit)>,
}

impl WeightModels {
    /// Names of columns dropped for lack of variation, per model.
    pub fn warnings(&self) -> Vec<String> {
        let mut fits = vec![&self.num_treat, &self.den_treat];
        if let Some((a, b)) = &self.censoring {
            fits.push(a);
            fits.push(b);
        }
        fits.iter()
            .enumerate()
            .flat_map(|(i, f)| {
                let model = [
                    "treatment numerator",
                    "treatment denominator",
                    "censoring numerator",
                    "censoring denominator",
                ][i];
                f.dropped
                    .iter()
                    .map(move |c| format!("{model} model: dropped constant column `{c}`"))
            })
            .collect()
    }
}

/// Fits the standard numerator/denominator models and builds the weights.
pub fn fit_weights(panel: &Panel, config: &WeightConfig) -> Result<(WeightModels, WeightSet)> {
    let num_f = Formula {
        baselines: panel.baseline_names().to_vec(),
        treatment: false,
        covariates: Vec::new(),
    };
    let den_f = Formula {
        covariates: panel.covariate_names().to_vec(),
        ..num_f.clone()
    };
    let num_treat = fit_pooled_logistic(panel, LogisticOutcome::TreatmentStart, &num_f, config.basis)?;
    let den_treat = fit_pooled_logistic(panel, LogisticOutcome::TreatmentStart, &den_f, config.basis)?;
    let censoring = if config.censoring && has_censoring(panel) {
        let num_c = Formula {
            treatment: true,
            ..num_f
        };
        let den_c = Formula {
            treatment: true,
            ..den_f
        };
        Some((
            fit_pooled_logistic(panel, LogisticOutcome::Censoring, &num_c, config.basis)?,
            fit_pooled_logistic(panel, LogisticOutcome::Censoring, &den_c, config.basis)?,
        ))
    } else {
        None
    };
    let set = stabilized_weights(
        panel,
        &num_treat,
        &den_treat,
        censoring.as_ref().map(|(a, b)| (a, b)),
        config.truncation,
    );
    Ok((
        WeightModels {
            num_treat,
            den_treat,
            censoring,
        },
        set,
    ))
}

fn has_censoring(panel: &Panel) -> bool {
    let grid_max = panel.t_max();
    panel.subjects().iter().any(|s| s.was_censored() && s.exit() < grid_max)
}

/// Stabilized censoring weights alone, or `None` without informative
/// censoring.
pub fn censoring_weights(
    panel: &Panel,
    basis: TimeBasis,
    truncation: Option<Truncation>,
) -> Result<Option<RowWeights>> {
    if !has_censoring(panel) {
        return Ok(None);
    }
    let num_f = Formula {
        baselines: panel.baseline_names().to_vec(),
        treatment: true,
        covariates: Vec::new(),
    };
    let den_f = Formula {
        covariates: panel.covariate_names().to_vec(),
        ..num_f.clone()
    };
    let num = fit_pooled_logistic(panel, LogisticOutcome::Censoring, &num_f, basis)?;
    let den = fit_pooled_logistic(panel, LogisticOutcome::Censoring, &den_f, basis)?;
    // A treatment model is not needed; reuse the censoring fits as a matched
    // pair so treatment factors are exactly 1.
    let set = stabilized_weights(panel, &num, &num, Some((&num, &den)), truncation);
    Ok(Some(set.censoring()))
}

/// Weighted additive fit with treatment and baseline covariates only.
pub fn msm_additive(panel: &Panel, weights: &WeightSet, formula: &Formula) -> Result<AdditiveFit> {
    if let Some(c) = formula.covariates.first() {
        return Err(Error::TimeVaryingInMsm(c.clone()));
    }
    fit_additive(panel, formula, Some(&weights.combined()))
}
