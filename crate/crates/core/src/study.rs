//! Replicated simulation study comparing the ATT estimators with their
//! comparators under each treatment regime.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::aalen::fit_additive;
use crate::att::{estimate_att, AttConfig};
use crate::counterfactual::{CounterfactualConfig, TreatmentTiming};
use crate::cox::fit_cox;
use crate::curve::CumulativeCurve;
use crate::design::{Formula, TREATMENT};
use crate::error::{Error, Result};
use crate::panel::{fmt_num, Panel};
use crate::rng::substream;
use crate::simulate::{build_full_counterfactual, generate_cohort, GeneratorParams, Regime, RegimeConfig};
use crate::weights::{fit_weights, msm_additive, WeightConfig};

/// One treatment-effect analysis of a simulated cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Analysis {
    /// Treatment-only fit on the observed arm stacked with untreated copies.
    Simulated,
    Shortcut,
    /// Plug-in formula; additive scale only.
    Direct,
    Msm,
    NaiveAdjusted,
    NaiveTreatment,
    /// Treatment-only fit on a cohort with covariate-independent uptake.
    Randomized,
}

impl Analysis {
    /// Rows of the hazard-ratio table, in order.
    pub const TABLE: [Analysis; 6] = [
        Analysis::Simulated,
        Analysis::Shortcut,
        Analysis::Msm,
        Analysis::NaiveAdjusted,
        Analysis::NaiveTreatment,
        Analysis::Randomized,
    ];
    pub const CURVES: [Analysis; 7] = [
        Analysis::Simulated,
        Analysis::Shortcut,
        Analysis::Direct,
        Analysis::Msm,
        Analysis::NaiveAdjusted,
        Analysis::NaiveTreatment,
        Analysis::Randomized,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Analysis::Simulated => "att_simulated",
            Analysis::Shortcut => "att_shortcut",
            Analysis::Direct => "att_direct",
            Analysis::Msm => "msm",
            Analysis::NaiveAdjusted => "naive_treatment_covariate",
            Analysis::NaiveTreatment => "naive_treatment_only",
            Analysis::Randomized => "randomized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub reps: usize,
    pub n: usize,
    pub master_seed: u64,
    pub regimes: Vec<Regime>,
    pub params: GeneratorParams,
    pub timing: TreatmentTiming,
    pub weights: WeightConfig,
}

impl StudyConfig {
    pub fn new(reps: usize, n: usize, master_seed: u64) -> Self {
        StudyConfig {
            reps,
            n,
            master_seed,
            regimes: Regime::CONFOUNDED.to_vec(),
            params: GeneratorParams::default(),
            timing: TreatmentTiming::default(),
            weights: WeightConfig::default(),
        }
    }
}

/// All analyses of one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub curves: Vec<(Analysis, CumulativeCurve)>,
    pub hazard_ratios: Vec<(Analysis, f64)>,
    pub truth: CumulativeCurve,
    pub treated_share: f64,
    pub event_share: f64,
    pub clamp_rate: f64,
    pub mean_treat_weight: f64,
}

impl RepRecord {
    pub fn curve(&self, a: Analysis) -> Option<&CumulativeCurve> {
        self.curves.iter().find(|(k, _)| *k == a).map(|(_, c)| c)
    }

    pub fn hazard_ratio(&self, a: Analysis) -> Option<f64> {
        self.hazard_ratios.iter().find(|(k, _)| *k == a).map(|(_, h)| *h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    pub regime: Regime,
    /// Indexed by replicate; `Err` holds the error kind.
    pub replicates: Vec<std::result::Result<RepRecord, String>>,
}

impl RegimeSummary {
    pub fn successes(&self) -> impl Iterator<Item = &RepRecord> {
        self.replicates.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn n_failed(&self) -> usize {
        self.replicates.iter().filter(|r| r.is_err()).count()
    }

    pub fn mean_curve(&self, a: Analysis) -> Option<CumulativeCurve> {
        let curves: Vec<CumulativeCurve> = self.successes().filter_map(|r| r.curve(a).cloned()).collect();
        CumulativeCurve::mean(a.label(), &curves)
    }

    pub fn mean_truth(&self) -> Option<CumulativeCurve> {
        let curves: Vec<CumulativeCurve> = self.successes().map(|r| r.truth.clone()).collect();
        CumulativeCurve::mean("truth", &curves)
    }

    /// Mean over successful replicates of `exp(b̂)`.
    pub fn mean_hazard_ratio(&self, a: Analysis) -> Option<f64> {
        mean(self.successes().filter_map(|r| r.hazard_ratio(a)))
    }

    pub fn mean_stat(&self, f: fn(&RepRecord) -> f64) -> Option<f64> {
        mean(self.successes().map(f))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub regimes: Vec<RegimeSummary>,
}

impl StudyResult {
    pub fn regime(&self, r: Regime) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|s| s.regime == r)
    }

    /// Hazard-ratio table: one row per analysis, one column per regime.
    pub fn write_table_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["analysis".to_string()];
        header.extend(self.regimes.iter().map(|r| format!("regime_{}", r.regime.label())));
        w.write_record(&header)?;
        for a in Analysis::TABLE {
            let mut rec = vec![a.label().to_string()];
            rec.extend(
                self.regimes
                    .iter()
                    .map(|r| r.mean_hazard_ratio(a).map(fmt_num).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        let mut rec = vec!["failed_replicates".to_string()];
        rec.extend(self.regimes.iter().map(|r| r.n_failed().to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    /// Mean curves of one regime as `t, <analysis>..., truth`.
    pub fn write_curves_csv<W: Write>(&self, regime: Regime, sink: W) -> Result<()> {
        let summary = self
            .regime(regime)
            .ok_or_else(|| Error::InvalidConfig(format!("regime {} not in study", regime.label())))?;
        let mut curves: Vec<CumulativeCurve> = Analysis::CURVES.iter().filter_map(|a| summary.mean_curve(*a)).collect();
        curves.extend(summary.mean_truth());
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["t".to_string()];
        header.extend(curves.iter().map(|c| c.label.clone()));
        w.write_record(&header)?;
        for t in 0..=self.config.params.t_max {
            let mut rec = vec![t.to_string()];
            rec.extend(curves.iter().map(|c| fmt_num(c.at(t))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn treatment_curve(panel: &Panel, formula: &Formula) -> Result<CumulativeCurve> {
    fit_additive(panel, formula, None)?.coefficient_curve(TREATMENT)
}

fn treatment_hr(panel: &Panel, formula: &Formula, weights: Option<&crate::design::RowWeights>) -> Result<f64> {
    fit_cox(panel, formula, weights)?.hazard_ratio(TREATMENT)
}

fn cohort_seed(master: u64, rep: usize) -> u64 {
    substream(master, &[rep as u64]).random()
}

/// Randomized-uptake reference: `(curve, hazard ratio)` of one replicate.
fn randomized_reference(config: &StudyConfig, rep: usize) -> Result<(CumulativeCurve, f64)> {
    let cohort = generate_cohort(&RegimeConfig {
        regime: Regime::Randomized,
        n: config.n,
        seed: cohort_seed(config.master_seed, rep),
        params: config.params.clone(),
    })?;
    let f = Formula::treatment_only();
    Ok((
        treatment_curve(&cohort.observed, &f)?,
        treatment_hr(&cohort.observed, &f, None)?,
    ))
}

/// Runs every analysis on one regime's cohort for replicate `rep`.
pub fn analyse_replicate(
    config: &StudyConfig,
    regime: Regime,
    rep: usize,
    randomized: &(CumulativeCurve, f64),
) -> Result<RepRecord> {
    let cohort = generate_cohort(&RegimeConfig {
        regime,
        n: config.n,
        seed: cohort_seed(config.master_seed, rep),
        params: config.params.clone(),
    })?;
    let panel = &cohort.observed;
    let b_only = Formula::treatment_only();
    let b_l = Formula::full(panel);

    let full_cf = build_full_counterfactual(&cohort);
    let att_cfg = AttConfig {
        counterfactual: CounterfactualConfig {
            timing: config.timing,
            ..CounterfactualConfig::for_panel(panel)
        },
        ..AttConfig::for_panel(panel)
    };
    let att = estimate_att(panel, &att_cfg)?;
    let manipulated = crate::counterfactual::build_manipulated_panel(&att.counterfactual);
    let (_, weights) = fit_weights(panel, &config.weights)?;
    let msm_formula = Formula::marginal(panel);
    let msm = msm_additive(panel, &weights, &msm_formula)?.coefficient_curve(TREATMENT)?;
    let combined = weights.combined();

    let curves = vec![
        (Analysis::Simulated, treatment_curve(&full_cf, &b_only)?),
        (Analysis::Shortcut, att.shortcut),
        (Analysis::Direct, att.direct),
        (Analysis::Msm, msm),
        (Analysis::NaiveAdjusted, treatment_curve(panel, &b_l)?),
        (Analysis::NaiveTreatment, treatment_curve(panel, &b_only)?),
        (Analysis::Randomized, randomized.0.clone()),
    ];
    let hazard_ratios = vec![
        (Analysis::Simulated, treatment_hr(&full_cf, &b_only, None)?),
        (Analysis::Shortcut, treatment_hr(&manipulated, &b_l, None)?),
        (Analysis::Msm, treatment_hr(panel, &msm_formula, Some(&combined))?),
        (Analysis::NaiveAdjusted, treatment_hr(panel, &b_l, None)?),
        (Analysis::NaiveTreatment, treatment_hr(panel, &b_only, None)?),
        (Analysis::Randomized, randomized.1),
    ];
    let summary = weights.summary();
    Ok(RepRecord {
        curves,
        hazard_ratios,
        truth: cohort.truth.clone(),
        treated_share: cohort.treated_share(),
        event_share: cohort.event_share(),
        clamp_rate: cohort.clamp_rate(),
        mean_treat_weight: summary.mean_treat,
    })
}

/// Replicates every regime `reps` times. Results depend only on the config,
/// never on the number of worker threads.
pub fn replicate_study(config: &StudyConfig) -> Result<StudyResult> {
    if config.reps == 0 || config.n == 0 {
        return Err(Error::InvalidConfig("reps and n must be at least 1".into()));
    }
    config.params.validate()?;
    let randomized: Vec<Result<(CumulativeCurve, f64)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| randomized_reference(config, rep))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..config.regimes.len())
        .flat_map(|g| (0..config.reps).map(move |rep| (g, rep)))
        .collect();
    let outcomes: Vec<std::result::Result<RepRecord, String>> = jobs
        .par_iter()
        .map(|&(g, rep)| {
            let reference = randomized[rep].as_ref().map_err(|e| e.kind().to_string())?;
            analyse_replicate(config, config.regimes[g], rep, reference).map_err(|e| e.kind().to_string())
        })
        .collect();
    let mut outcomes = outcomes.into_iter();
    let regimes = config
        .regimes
        .iter()
        .map(|&regime| RegimeSummary {
            regime,
            replicates: outcomes.by_ref().take(config.reps).collect(),
        })
        .collect();
    Ok(StudyResult {
        config: config.clone(),
        regimes,
    })
}

/// Mean treatment hazard ratios per analysis and regime.
pub fn cox_benchmark(config: &StudyConfig) -> Result<Vec<(Analysis, Vec<Option<f64>>)>> {
    let result = replicate_study(config)?;
    Ok(Analysis::TABLE
        .iter()
        .map(|&a| (a, result.regimes.iter().map(|r| r.mean_hazard_ratio(a)).collect()))
        .collect())
}
