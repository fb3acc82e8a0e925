//! Cox proportional hazards on the interval grid.
//!
//! Each person-interval is a counting-process row `(t, t + 1]`; all events in
//! an interval are tied and handled by the Breslow approximation.

use crate::design::{Design, Formula, RowWeights};
use crate::error::{Error, Result};
use crate::linalg::SymFactor;
use crate::panel::Panel;

/// Stricter than the 1e-8 acceptance bound so coefficients are accurate too.
pub const GRADIENT_TOL: f64 = 1e-11;
pub const MAX_ITERATIONS: usize = 100;
/// `|b| * sd(x)` beyond which a coefficient is taken to diverge.
pub const DIVERGENCE_LIMIT: f64 = 10.0;
/// Information collapse ratio that signals a monotone likelihood.
const INFO_COLLAPSE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub hazard_ratios: Vec<f64>,
    /// From the observed information; NaN for aliased columns.
    pub se: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub null_log_partial_likelihood: f64,
    pub iterations: usize,
    /// Max-norm of the score divided by the number of events.
    pub gradient_norm: f64,
    pub n_events: usize,
}

impl CoxFit {
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn hazard_ratio(&self, name: &str) -> Result<f64> {
        Ok(self.hazard_ratios[self.index_of(name)?])
    }
}

/// Centered design rows grouped by interval.
struct CoxData {
    p: usize,
    /// Per interval with events: `(x rows, weights, event flags)`.
    strata: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)>,
    sd: Vec<f64>,
    n_events: usize,
}

impl CoxData {
    fn build(panel: &Panel, formula: &Formula, weights: Option<&RowWeights>) -> Result<(Self, Vec<String>)> {
        panel.require_contiguous()?;
        if let Some(w) = weights {
            w.check(panel)?;
        }
        let design = Design::resolve(panel, formula, false)?;
        let p = design.width();
        let subjects = panel.subjects();
        let by_t = panel.rows_by_interval();

        let mut sum = vec![0.0; p];
        let mut sum2 = vec![0.0; p];
        let mut count = 0usize;
        let mut x = vec![0.0; p];
        for rows in &by_t {
            for &(i, k) in rows {
                design.fill(&subjects[i], &subjects[i].rows[k], &mut x);
                if let Some(c) = x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidValue {
                        id: subjects[i].id.clone(),
                        column: design.names[c].clone(),
                        value: "missing".into(),
                    });
                }
                for j in 0..p {
                    sum[j] += x[j];
                    sum2[j] += x[j] * x[j];
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let sd: Vec<f64> = (0..p)
            .map(|j| (sum2[j] / n - mean[j] * mean[j]).max(0.0).sqrt())
            .collect();

        let mut strata = Vec::new();
        let mut n_events = 0;
        for rows in &by_t {
            let events: Vec<bool> = rows.iter().map(|&(i, k)| subjects[i].rows[k].event).collect();
            let d = events.iter().filter(|e| **e).count();
            if d == 0 {
                continue;
            }
            n_events += d;
            let mut xs = Vec::with_capacity(rows.len() * p);
            let mut ws = Vec::with_capacity(rows.len());
            for &(i, k) in rows {
                design.fill(&subjects[i], &subjects[i].rows[k], &mut x);
                xs.extend(x.iter().zip(&mean).map(|(v, m)| v - m));
                ws.push(weights.map_or(1.0, |w| w.get(i, k)));
            }
            strata.push((xs, ws, events));
        }
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        Ok((
            CoxData {
                p,
                strata,
                sd,
                n_events,
            },
            design.names,
        ))
    }

    /// Log partial likelihood, score and observed information at `beta`.
    fn eval(&self, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        for (xs, ws, events) in &self.strata {
            let m = ws.len();
            let etas: Vec<f64> = (0..m)
                .map(|r| xs[r * p..(r + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum())
                .collect();
            // Shift by the max linear predictor for a stable log-sum-exp.
            let shift = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            s1.iter_mut().for_each(|v| *v = 0.0);
            s2.iter_mut().for_each(|v| *v = 0.0);
            let mut d_w = 0.0;
            for r in 0..m {
                let xr = &xs[r * p..(r + 1) * p];
                let e = ws[r] * (etas[r] - shift).exp();
                s0 += e;
                for a in 0..p {
                    s1[a] += e * xr[a];
                    for b in 0..p {
                        s2[a * p + b] += e * xr[a] * xr[b];
                    }
                }
                if events[r] {
                    d_w += ws[r];
                    ll += ws[r] * etas[r];
                    for a in 0..p {
                        grad[a] += ws[r] * xr[a];
                    }
                }
            }
            ll -= d_w * (s0.ln() + shift);
            for a in 0..p {
                let ma = s1[a] / s0;
                grad[a] -= d_w * ma;
                for b in 0..p {
                    info[a * p + b] += d_w * (s2[a * p + b] / s0 - ma * s1[b] / s0);
                }
            }
        }
        (ll, grad, info)
    }
}

/// Newton maximization of the (optionally case-weighted) partial likelihood.
pub fn fit_cox(panel: &Panel, formula: &Formula, weights: Option<&RowWeights>) -> Result<CoxFit> {
    let (data, names) = CoxData::build(panel, formula, weights)?;
    let p = data.p;
    let scale = data.n_events as f64;
    let mut beta = vec![0.0; p];
    let (null_ll, _, info0) = data.eval(&beta);
    let mut iterations = 0;
    let (ll, info, gradient_norm) = loop {
        let (ll, grad, info) = data.eval(&beta);
        let norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;
        if norm < GRADIENT_TOL || iterations == MAX_ITERATIONS {
            break (ll, info, norm);
        }
        iterations += 1;
        let step = SymFactor::new(&info, p).solve(&grad);
        let mut h = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + h * s).collect();
            let (tl, _, _) = data.eval(&trial);
            if tl >= ll - 1e-12 * ll.abs() || h < 1e-10 {
                beta = trial;
                break;
            }
            h *= 0.5;
        }
    };
    if let Some(j) = (0..p).find(|&j| {
        let i0 = info0[j * p + j];
        i0 > 0.0 && ((beta[j] * data.sd[j]).abs() > DIVERGENCE_LIMIT || info[j * p + j] < INFO_COLLAPSE * i0)
    }) {
        return Err(Error::MonotoneLikelihood {
            coefficient: names[j].clone(),
        });
    }
    if gradient_norm >= GRADIENT_TOL {
        return Err(Error::NonConvergence {
            iterations,
            gradient: gradient_norm,
        });
    }
    let factor = SymFactor::new(&info, p);
    let inv = factor.inverse();
    let se = (0..p)
        .map(|j| {
            if factor.aliased()[j] {
                f64::NAN
            } else {
                inv[j * p + j].max(0.0).sqrt()
            }
        })
        .collect();
    Ok(CoxFit {
        hazard_ratios: beta.iter().map(|b| b.exp()).collect(),
        names,
        coefficients: beta,
        se,
        log_partial_likelihood: ll,
        null_log_partial_likelihood: null_ll,
        iterations,
        gradient_norm,
        n_events: data.n_events,
    })
}

/// Log partial likelihood at `beta` (design columns in formula order).
pub fn log_partial_likelihood(
    panel: &Panel,
    formula: &Formula,
    weights: Option<&RowWeights>,
    beta: &[f64],
) -> Result<f64> {
    let (data, _) = CoxData::build(panel, formula, weights)?;
    check_len(&data, beta)?;
    Ok(data.eval(beta).0)
}

/// Analytic score of [`log_partial_likelihood`].
pub fn score(panel: &Panel, formula: &Formula, weights: Option<&RowWeights>, beta: &[f64]) -> Result<Vec<f64>> {
    let (data, _) = CoxData::build(panel, formula, weights)?;
    check_len(&data, beta)?;
    Ok(data.eval(beta).1)
}

fn check_len(data: &CoxData, beta: &[f64]) -> Result<()> {
    if beta.len() != data.p {
        return Err(Error::InvalidConfig(format!(
            "{} coefficients given for {} columns",
            beta.len(),
            data.p
        )));
    }
    Ok(())
}
