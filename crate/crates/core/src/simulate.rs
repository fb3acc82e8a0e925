//! Discrete-time cohorts with a treatment-confounder feedback loop.
//!
//! A single covariate `L` drives both treatment start and the event hazard;
//! treatment in turn changes the drift of `L`. Every subject is generated
//! twice: once as observed and once with treatment never offered, sharing
//! random numbers so the two arms differ only through treatment.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::CumulativeCurve;
use crate::error::{Error, Result};
use crate::panel::{Panel, Row, SubjectRecord};
use crate::rng::substream;
use crate::weights::expit;

pub const COVARIATE: &str = "L";

/// How treatment initiation depends on the current covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Low covariate values make treatment likely.
    #[serde(rename = "1")]
    One,
    /// Initiation nearly independent of the covariate.
    #[serde(rename = "2")]
    Two,
    /// High covariate values make treatment likely.
    #[serde(rename = "3")]
    Three,
    /// Constant initiation probability.
    Randomized,
}

impl Regime {
    pub const CONFOUNDED: [Regime; 3] = [Regime::One, Regime::Two, Regime::Three];

    pub fn label(self) -> &'static str {
        match self {
            Regime::One => "1",
            Regime::Two => "2",
            Regime::Three => "3",
            Regime::Randomized => "randomized",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Regime::One => 1,
            Regime::Two => 2,
            Regime::Three => 3,
            Regime::Randomized => 4,
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Regime::One),
            "2" => Ok(Regime::Two),
            "3" => Ok(Regime::Three),
            "randomized" | "r" => Ok(Regime::Randomized),
            _ => Err(Error::InvalidConfig(format!("unknown regime `{s}`"))),
        }
    }
}

/// Logistic initiation curve `expit(intercept + slope * (L - centre))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uptake {
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// `L(0) = sqrt(U)` with `U` uniform on this range.
    pub l0_range: (f64, f64),
    /// Hazard `a0 + a_b * B(t) + a_l * (l_ref - L(t))`, clamped to `[0, 1]`.
    pub a0: f64,
    pub a_b: f64,
    pub a_l: f64,
    pub l_ref: f64,
    /// Per-interval decrease of `L` off treatment.
    pub drift_untreated: f64,
    /// Per-interval increase of `L` on treatment.
    pub drift_treated: f64,
    pub noise: f64,
    /// Centre of the initiation curves.
    pub uptake_centre: f64,
    pub regime1: Uptake,
    pub regime2: Uptake,
    pub regime3: Uptake,
    pub randomized_prob: f64,
    pub t_max: u32,
    pub common_random_numbers: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            l0_range: (25.0, 1000.0),
            a0: 0.00554,
            a_b: -0.00444,
            a_l: 0.000826,
            l_ref: 47.1,
            drift_untreated: 0.685,
            drift_treated: 0.959,
            noise: 0.621,
            uptake_centre: 18.06,
            regime1: Uptake {
                intercept: -1.696,
                slope: -0.0279,
            },
            regime2: Uptake {
                intercept: -1.696,
                slope: 0.024,
            },
            regime3: Uptake {
                intercept: -1.696,
                slope: 0.0279,
            },
            randomized_prob: 0.14,
            t_max: 11,
            common_random_numbers: true,
        }
    }
}

impl GeneratorParams {
    pub fn uptake_probability(&self, regime: Regime, l: f64) -> f64 {
        let u = match regime {
            Regime::One => self.regime1,
            Regime::Two => self.regime2,
            Regime::Three => self.regime3,
            Regime::Randomized => return self.randomized_prob.clamp(0.0, 1.0),
        };
        expit(u.intercept + u.slope * (l - self.uptake_centre))
    }

    /// Unclamped event probability.
    pub fn raw_hazard(&self, treated: bool, l: f64) -> f64 {
        self.a0 + if treated { self.a_b } else { 0.0 } + self.a_l * (self.l_ref - l)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.l0_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig("l0_range must satisfy 0 <= lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&self.randomized_prob) {
            return Err(Error::InvalidConfig("randomized_prob outside [0, 1]".into()));
        }
        if self.noise.is_nan() || self.noise < 0.0 || self.t_max == 0 {
            return Err(Error::InvalidConfig("noise must be >= 0 and t_max >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub n: usize,
    pub seed: u64,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCohort {
    pub regime: Regime,
    pub observed: Panel,
    /// Same subjects with treatment never offered.
    pub counterfactual_untreated: Panel,
    pub start_times: Vec<Option<u32>>,
    /// Person-intervals (both arms) whose hazard needed clamping.
    pub clamped: usize,
    pub person_intervals: usize,
    /// Cumulative difference between the treated subjects' hazard and the
    /// hazard of their untreated copies, over subjects on treatment.
    pub truth: CumulativeCurve,
}

impl SimCohort {
    pub fn clamp_rate(&self) -> f64 {
        self.clamped as f64 / self.person_intervals.max(1) as f64
    }

    pub fn treated_share(&self) -> f64 {
        let n = self.start_times.len().max(1) as f64;
        self.start_times.iter().filter(|s| s.is_some()).count() as f64 / n
    }

    pub fn event_share(&self) -> f64 {
        let s = self.observed.subjects();
        s.iter().filter(|s| s.had_event()).count() as f64 / s.len().max(1) as f64
    }
}

/// Random numbers consumed by one subject in one arm.
struct Draws {
    noise: Vec<f64>,
    event: Vec<f64>,
    treat: Vec<f64>,
}

impl Draws {
    fn new<R: Rng>(rng: &mut R, t_max: u32) -> Self {
        let k = t_max as usize + 1;
        Draws {
            noise: (0..k).map(|_| StandardNormal.sample(rng)).collect(),
            event: (0..k).map(|_| rng.random()).collect(),
            treat: (0..k).map(|_| rng.random()).collect(),
        }
    }
}

struct Path {
    record: SubjectRecord,
    start: Option<u32>,
    /// True event probability per row.
    hazard: Vec<f64>,
    clamped: usize,
}

fn run_arm(id: &str, l0: f64, params: &GeneratorParams, regime: Option<Regime>, d: &Draws) -> Path {
    let mut l = l0;
    let mut treated = false;
    let mut start = None;
    let mut rows = Vec::new();
    let mut hazard = Vec::new();
    let mut clamped = 0;
    for t in 0..=params.t_max {
        let ti = t as usize;
        if let (false, Some(r)) = (treated, regime) {
            if d.treat[ti] < params.uptake_probability(r, l) {
                treated = true;
                start = Some(t);
            }
        }
        let raw = params.raw_hazard(treated, l);
        let h = raw.clamp(0.0, 1.0);
        if h != raw {
            clamped += 1;
        }
        let event = d.event[ti] < h;
        rows.push(Row {
            t,
            treated,
            covariates: vec![l],
            observed: vec![true],
            event,
            censored: !event && t == params.t_max,
        });
        hazard.push(h);
        if event {
            break;
        }
        let drift = if treated {
            params.drift_treated
        } else {
            -params.drift_untreated
        };
        l += drift + params.noise * d.noise[ti];
    }
    Path {
        record: SubjectRecord {
            id: id.to_string(),
            baseline: vec![],
            rows,
        },
        start,
        hazard,
        clamped,
    }
}

pub fn generate_cohort(config: &RegimeConfig) -> Result<SimCohort> {
    let params = &config.params;
    params.validate()?;
    if config.n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let mut rng = substream(config.seed, &[config.regime.stream_id()]);
    let (lo, hi) = params.l0_range;
    let mut observed = Vec::with_capacity(config.n);
    let mut untreated = Vec::with_capacity(config.n);
    let mut starts = Vec::with_capacity(config.n);
    let mut clamped = 0;
    let mut person_intervals = 0;
    let t_max = params.t_max;
    let k = t_max as usize + 1;
    let mut h1 = vec![0.0; k];
    let mut h0 = vec![0.0; k];
    let mut n1 = vec![0usize; k];
    let mut n0 = vec![0usize; k];
    for i in 0..config.n {
        let id = (i + 1).to_string();
        let l0 = rng.random_range(lo..=hi).sqrt();
        let shared = Draws::new(&mut rng, t_max);
        let fresh = Draws::new(&mut rng, t_max);
        let obs = run_arm(&id, l0, params, Some(config.regime), &shared);
        let cf = match (obs.start, params.common_random_numbers) {
            (Some(s), false) => run_arm_switching(&id, l0, params, &shared, &fresh, s),
            _ => run_arm(&id, l0, params, None, &shared),
        };
        if let Some(s) = obs.start {
            for (row, h) in obs.record.rows.iter().zip(&obs.hazard) {
                if row.t >= s {
                    h1[row.t as usize] += h;
                    n1[row.t as usize] += 1;
                }
            }
            for (row, h) in cf.record.rows.iter().zip(&cf.hazard) {
                if row.t >= s && obs.record.row_at(row.t).is_some() {
                    h0[row.t as usize] += h;
                    n0[row.t as usize] += 1;
                }
            }
        }
        clamped += obs.clamped + cf.clamped;
        person_intervals += obs.record.rows.len() + cf.record.rows.len();
        starts.push(obs.start);
        observed.push(obs.record);
        untreated.push(cf.record);
    }
    let mut truth = CumulativeCurve::zeros("truth", t_max);
    let mut running = 0.0;
    for t in 0..k {
        if n1[t] > 0 && n0[t] > 0 {
            running += h1[t] / n1[t] as f64 - h0[t] / n0[t] as f64;
        }
        truth.values[t] = running;
    }
    let names = vec![COVARIATE.to_string()];
    Ok(SimCohort {
        regime: config.regime,
        observed: Panel::new(names.clone(), vec![], observed)?,
        counterfactual_untreated: Panel::new(names, vec![], untreated)?,
        start_times: starts,
        clamped,
        person_intervals,
        truth,
    })
}

/// Untreated arm using `shared` draws before `switch` and `fresh` from it on.
fn run_arm_switching(id: &str, l0: f64, params: &GeneratorParams, shared: &Draws, fresh: &Draws, switch: u32) -> Path {
    let s = switch as usize;
    let spliced = Draws {
        noise: shared.noise[..s].iter().chain(&fresh.noise[s..]).copied().collect(),
        event: shared.event[..s].iter().chain(&fresh.event[s..]).copied().collect(),
        treat: shared.treat.clone(),
    };
    run_arm(id, l0, params, None, &spliced)
}

/// Observed panel plus an untreated copy (id suffix `_cf`) of every treated
/// subject, entering at its start time.
///
/// Pre-start history is shared between arms and already present in the
/// observed panel; repeating it would add event-free person-time, since a
/// subject who starts at `S` has survived to `S` in both arms.
pub fn build_full_counterfactual(cohort: &SimCohort) -> Panel {
    let mut subjects = cohort.observed.subjects().to_vec();
    for (s, (cf, start)) in cohort.observed.subjects().iter().zip(
        cohort
            .counterfactual_untreated
            .subjects()
            .iter()
            .zip(&cohort.start_times),
    ) {
        debug_assert_eq!(s.id, cf.id);
        if let Some(start) = *start {
            let mut copy = cf.clone();
            copy.id = format!("{}_cf", cf.id);
            copy.rows.retain(|r| r.t >= start);
            if !copy.rows.is_empty() {
                subjects.push(copy);
            }
        }
    }
    cohort
        .observed
        .with_subjects(subjects)
        .expect("generated subjects are valid")
}
