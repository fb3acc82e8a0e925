//! Average treatment effect on the treated, on the cumulative hazard scale.

use rand::Rng;
use rayon::prelude::*;

use crate::aalen::{fit_additive, AdditiveFit};
use crate::counterfactual::{
    build_manipulated_panel, impute_counterfactual, treated_averages, CfPanel, CounterfactualConfig, TreatedAverages,
};
pub use crate::curve::CumulativeCurve;
use crate::curve::{quantile, Band};
use crate::design::{Formula, RowWeights, TREATMENT};
use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::rng::substream;
use crate::weights::{censoring_weights, TimeBasis, Truncation};

/// `D̂*(t) = Δ̂(t) + Σ_j Σ_{u≤t} (â_j(u) - b̂_j(u)) dΓ̂_j(u)`.
///
/// Counterfactual variables absent from the fit have `dΓ̂_j = 0`.
pub fn att_direct(fit: &AdditiveFit, avgs: &TreatedAverages) -> Result<CumulativeCurve> {
    let (direct, indirect) = mediation_decompose(fit, avgs)?;
    let mut total = CumulativeCurve::zeros("att_direct", fit.t_max);
    for (v, (d, i)) in total.values.iter_mut().zip(direct.values.iter().zip(&indirect.values)) {
        *v = d + i;
    }
    Ok(total)
}

/// Splits [`att_direct`] into `Δ̂(t)` and the part carried by covariates.
pub fn mediation_decompose(fit: &AdditiveFit, avgs: &TreatedAverages) -> Result<(CumulativeCurve, CumulativeCurve)> {
    if fit.t_max != avgs.t_max {
        return Err(Error::GridMismatch {
            expected: fit.t_max,
            found: avgs.t_max,
        });
    }
    let direct = fit.coefficient_curve(TREATMENT)?.with_label("direct");
    let gammas: Vec<Option<usize>> = avgs.variable_names.iter().map(|v| fit.coef_index(v).ok()).collect();
    let mut indirect = CumulativeCurve::zeros("indirect", fit.t_max);
    let mut running = 0.0;
    for t in 0..=fit.t_max {
        let diff = avgs.difference(t);
        for (d, g) in diff.iter().zip(&gammas) {
            if let Some(j) = g {
                running += d * fit.increment_at(*j, t);
            }
        }
        indirect.values[t as usize] = running;
    }
    Ok((direct, indirect))
}

/// Treatment curve of an additive fit on the manipulated panel.
pub fn att_shortcut(manipulated: &Panel, formula: &Formula, weights: Option<&RowWeights>) -> Result<CumulativeCurve> {
    let fit = fit_additive(manipulated, formula, weights)?;
    Ok(fit.coefficient_curve(TREATMENT)?.with_label("att_shortcut"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttConfig {
    pub counterfactual: CounterfactualConfig,
    /// Outcome model; must contain the treatment indicator.
    pub outcome: Formula,
    /// Stabilized censoring weights in the outcome fits.
    pub ipcw: bool,
}

impl AttConfig {
    pub fn for_panel(panel: &Panel) -> Self {
        AttConfig {
            counterfactual: CounterfactualConfig::for_panel(panel),
            outcome: Formula::full(panel),
            ipcw: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttEstimate {
    pub fit: AdditiveFit,
    pub counterfactual: CfPanel,
    pub averages: TreatedAverages,
    pub direct: CumulativeCurve,
    pub shortcut: CumulativeCurve,
    pub mediation_direct: CumulativeCurve,
    pub mediation_indirect: CumulativeCurve,
}

/// Runs imputation, both outcome fits and the decomposition.
pub fn estimate_att(panel: &Panel, config: &AttConfig) -> Result<AttEstimate> {
    if !panel.has_treated_person_time() {
        return Err(Error::NoTreatedPersonTime);
    }
    if !config.outcome.treatment {
        return Err(Error::InvalidConfig(
            "outcome model must include the treatment indicator".into(),
        ));
    }
    let weights = if config.ipcw {
        censoring_weights(panel, TimeBasis::default(), Some(Truncation::default()))?
    } else {
        None
    };
    let fit = fit_additive(panel, &config.outcome, weights.as_ref())?;
    let cf = impute_counterfactual(panel, &config.counterfactual)?;
    let averages = treated_averages(&cf);
    let (mediation_direct, mediation_indirect) = mediation_decompose(&fit, &averages)?;
    let direct = att_direct(&fit, &averages)?;
    let manipulated = build_manipulated_panel(&cf);
    let shortcut = att_shortcut(&manipulated, &config.outcome, weights.as_ref())?;
    Ok(AttEstimate {
        fit,
        counterfactual: cf,
        averages,
        direct,
        shortcut,
        mediation_direct,
        mediation_indirect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttEstimator {
    Direct,
    Shortcut,
}

impl AttEstimator {
    fn pick(self, est: AttEstimate) -> CumulativeCurve {
        match self {
            AttEstimator::Direct => est.direct,
            AttEstimator::Shortcut => est.shortcut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

/// Minimum share of replicates that must succeed.
pub const MIN_SUCCESS_SHARE: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Full-sample estimate carrying the percentile band.
    pub curve: CumulativeCurve,
    pub successes: usize,
    /// `(replicate, error kind)` for each failed replicate.
    pub failures: Vec<(usize, String)>,
}

/// Draws `n` subjects with replacement; copies get distinct ids.
pub fn resample_subjects<R: Rng>(panel: &Panel, rng: &mut R) -> Panel {
    let n = panel.len();
    let subjects = (0..n)
        .map(|k| {
            let mut s = panel.subjects()[rng.random_range(0..n)].clone();
            s.id = format!("{}_b{k}", s.id);
            s
        })
        .collect();
    Panel::new(
        panel.covariate_names().to_vec(),
        panel.baseline_names().to_vec(),
        subjects,
    )
    .expect("resampled subjects keep their validated rows")
}

/// Percentile bands from subject-level resampling of the whole pipeline.
pub fn bootstrap_band(
    estimator: AttEstimator,
    panel: &Panel,
    config: &AttConfig,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if boot.replicates == 0 || !(boot.level > 0.0 && boot.level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs replicates >= 1 and 0 < level < 1 (got {}, {})",
            boot.replicates, boot.level
        )));
    }
    let mut curve = estimator.pick(estimate_att(panel, config)?);
    let t_max = panel.t_max();
    let outcomes: Vec<Result<CumulativeCurve>> = (0..boot.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(boot.seed, &[b as u64]);
            let sample = resample_subjects(panel, &mut rng);
            estimate_att(&sample, config).map(|e| estimator.pick(e))
        })
        .collect();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(c) => curves.push(c),
            Err(e) => failures.push((b, e.kind().to_string())),
        }
    }
    let needed = (MIN_SUCCESS_SHARE * boot.replicates as f64).ceil() as usize;
    if curves.len() < needed {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: boot.replicates,
        });
    }
    let alpha = (1.0 - boot.level) / 2.0;
    let mut lower = Vec::with_capacity(t_max as usize + 1);
    let mut upper = Vec::with_capacity(t_max as usize + 1);
    let mut column = Vec::with_capacity(curves.len());
    for t in 0..=t_max {
        column.clear();
        column.extend(curves.iter().map(|c| c.at(t)));
        column.sort_by(f64::total_cmp);
        lower.push(quantile(&column, alpha));
        upper.push(quantile(&column, 1.0 - alpha));
    }
    curve.band = Some(Band {
        level: boot.level,
        lower,
        upper,
    });
    Ok(BootstrapResult {
        curve,
        successes: curves.len(),
        failures,
    })
}
