//! Long-format discrete-time cohort data.
//!
//! A [`Panel`] holds one [`SubjectRecord`] per subject, each with one [`Row`]
//! per interval from entry (normally `t = 0`) up to the subject's exit.
//! Treatment is a monotone indicator; an event or censoring may only be
//! flagged on the last row. Estimators require contiguous rows, which
//! [`locf_expand`] produces from sparsely measured input. Hazard models accept
//! delayed entry; trajectory models need a row at `t = 0`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One interval of follow-up for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: u32,
    pub treated: bool,
    /// Time-varying covariates; `NaN` marks a cell with no value yet.
    pub covariates: Vec<f64>,
    /// `true` where the covariate was measured in this interval.
    pub observed: Vec<bool>,
    pub event: bool,
    pub censored: bool,
}

impl Row {
    pub fn all_observed(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub baseline: Vec<f64>,
    pub rows: Vec<Row>,
}

impl SubjectRecord {
    /// Treatment-start interval, `None` if never treated.
    pub fn start(&self) -> Option<u32> {
        self.rows.iter().find(|r| r.treated).map(|r| r.t)
    }

    /// Last interval under observation.
    pub fn exit(&self) -> u32 {
        self.rows.last().map(|r| r.t).unwrap_or(0)
    }

    pub fn had_event(&self) -> bool {
        self.rows.last().is_some_and(|r| r.event)
    }

    pub fn was_censored(&self) -> bool {
        self.rows.last().is_some_and(|r| r.censored)
    }

    pub fn row_at(&self, t: u32) -> Option<&Row> {
        self.rows.binary_search_by_key(&t, |r| r.t).ok().map(|i| &self.rows[i])
    }

    /// First interval under observation.
    pub fn entry(&self) -> u32 {
        self.rows.first().map(|r| r.t).unwrap_or(0)
    }

    /// No interval is skipped between entry and exit.
    pub fn is_contiguous(&self) -> bool {
        let entry = self.entry();
        self.rows.iter().enumerate().all(|(i, r)| r.t == entry + i as u32)
    }
}

/// Validation outcome for a set of subject records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<(String, String)>,
    pub warnings: Vec<String>,
    pub counts: PanelCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PanelCounts {
    pub subjects: usize,
    pub person_intervals: usize,
    pub events: usize,
    pub censorings: usize,
    pub treated_subjects: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    /// Checks every panel invariant, collecting all violations.
    pub fn check(subjects: &[SubjectRecord], n_cov: usize, n_base: usize) -> Self {
        let mut report = ValidationReport::default();
        let mut seen = HashMap::new();
        for s in subjects {
            if seen.insert(s.id.as_str(), ()).is_some() {
                report.errors.push((s.id.clone(), "duplicate subject id".into()));
            }
            if s.baseline.len() != n_base {
                report
                    .errors
                    .push((s.id.clone(), "baseline vector has wrong length".into()));
            }
            if s.rows.is_empty() {
                report.errors.push((s.id.clone(), "no rows".into()));
                continue;
            }
            if let Some(e) = check_rows(s, n_cov) {
                report.errors.push((s.id.clone(), e.to_string()));
            }
            if !s.is_contiguous() {
                report.warnings.push(format!("subject {} has interval gaps", s.id));
            }
            let c = &mut report.counts;
            c.subjects += 1;
            c.person_intervals += s.rows.len();
            c.events += s.had_event() as usize;
            c.censorings += s.was_censored() as usize;
            c.treated_subjects += s.start().is_some() as usize;
        }
        report
    }
}

fn check_rows(s: &SubjectRecord, n_cov: usize) -> Option<Error> {
    let last = s.rows.len() - 1;
    for (i, r) in s.rows.iter().enumerate() {
        if r.covariates.len() != n_cov || r.observed.len() != n_cov {
            return Some(Error::InvalidValue {
                id: s.id.clone(),
                column: "covariates".into(),
                value: format!("{} values", r.covariates.len()),
            });
        }
        if r.observed.iter().zip(&r.covariates).any(|(o, v)| *o && !v.is_finite()) {
            return Some(Error::InvalidValue {
                id: s.id.clone(),
                column: "covariates".into(),
                value: "observed cell without a value".into(),
            });
        }
        if r.event && r.censored {
            return Some(Error::InvalidValue {
                id: s.id.clone(),
                column: "event/censor".into(),
                value: format!("both set at t={}", r.t),
            });
        }
        if i > 0 {
            let prev = &s.rows[i - 1];
            if prev.t == r.t {
                return Some(Error::DuplicateRow {
                    id: s.id.clone(),
                    t: r.t,
                });
            }
            if prev.t > r.t {
                return Some(Error::InvalidValue {
                    id: s.id.clone(),
                    column: "t".into(),
                    value: "rows not sorted".into(),
                });
            }
            if prev.treated && !r.treated {
                return Some(Error::NonMonotoneTreatment {
                    id: s.id.clone(),
                    t: r.t,
                });
            }
        }
        if i < last && (r.event || r.censored) {
            return Some(Error::PostExitRow {
                id: s.id.clone(),
                t: s.rows[i + 1].t,
            });
        }
    }
    None
}

/// Validated, immutable cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    subjects: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
    baseline_names: Vec<String>,
    t_max: u32,
}

impl Panel {
    /// Builds a panel, rejecting the first invariant violation found.
    pub fn new(
        covariate_names: Vec<String>,
        baseline_names: Vec<String>,
        mut subjects: Vec<SubjectRecord>,
    ) -> Result<Self> {
        let n_cov = covariate_names.len();
        let n_base = baseline_names.len();
        let mut ids = HashMap::new();
        for s in &subjects {
            if ids.insert(s.id.clone(), ()).is_some() {
                return Err(Error::DuplicateRow {
                    id: s.id.clone(),
                    t: s.rows.first().map(|r| r.t).unwrap_or(0),
                });
            }
            if s.baseline.len() != n_base {
                return Err(Error::InvalidValue {
                    id: s.id.clone(),
                    column: "baseline".into(),
                    value: format!("{} values", s.baseline.len()),
                });
            }
            if s.rows.is_empty() {
                return Err(Error::InvalidValue {
                    id: s.id.clone(),
                    column: "t".into(),
                    value: "no rows".into(),
                });
            }
            if let Some(e) = check_rows(s, n_cov) {
                return Err(e);
            }
        }
        subjects.sort_by(|a, b| compare_ids(&a.id, &b.id));
        let t_max = subjects.iter().map(|s| s.exit()).max().unwrap_or(0);
        Ok(Panel {
            subjects,
            covariate_names,
            baseline_names,
            t_max,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn baseline_index(&self, name: &str) -> Result<usize> {
        self.baseline_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport::check(&self.subjects, self.covariate_names.len(), self.baseline_names.len())
    }

    pub fn is_contiguous(&self) -> bool {
        self.subjects.iter().all(|s| s.is_contiguous())
    }

    pub(crate) fn require_contiguous(&self) -> Result<()> {
        match self.subjects.iter().find(|s| !s.is_contiguous()) {
            Some(s) => Err(Error::GappedPanel { id: s.id.clone() }),
            None => Ok(()),
        }
    }

    pub fn has_treated_person_time(&self) -> bool {
        self.subjects.iter().any(|s| s.start().is_some())
    }

    /// `(subject index, row index)` pairs grouped by interval.
    pub fn rows_by_interval(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.t_max as usize + 1];
        for (i, s) in self.subjects.iter().enumerate() {
            for (k, r) in s.rows.iter().enumerate() {
                out[r.t as usize].push((i, k));
            }
        }
        out
    }

    /// Same panel with subjects replaced; used for resampling and stacking.
    pub fn with_subjects(&self, subjects: Vec<SubjectRecord>) -> Result<Self> {
        Panel::new(self.covariate_names.clone(), self.baseline_names.clone(), subjects)
    }

    pub fn into_subjects(self) -> Vec<SubjectRecord> {
        self.subjects
    }
}

/// Integer-aware id ordering so that "2" sorts before "10".
fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Column roles for the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub id: String,
    pub time: String,
    pub event: String,
    pub censor: String,
    pub treat: String,
    pub covariates: Vec<String>,
    pub baseline: Vec<String>,
    /// Covariate name -> header of its 0/1 measurement flag column.
    pub observed: BTreeMap<String, String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: "id".into(),
            time: "t".into(),
            event: "event".into(),
            censor: "censor".into(),
            treat: "treat".into(),
            covariates: Vec::new(),
            baseline: Vec::new(),
            observed: BTreeMap::new(),
        }
    }
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    /// Schema matching the layout written by [`write_panel`].
    pub fn for_panel(panel: &Panel) -> Self {
        Schema {
            covariates: panel.covariate_names.clone(),
            baseline: panel.baseline_names.clone(),
            observed: panel
                .covariate_names
                .iter()
                .map(|c| (c.clone(), format!("obs_{c}")))
                .collect(),
            ..Schema::default()
        }
    }
}

impl Schema {
    /// Default role names; every other column is a covariate, and a column
    /// `obs_<name>` is taken as the measurement flag of covariate `<name>`.
    pub fn infer(headers: &[String]) -> Self {
        let base = Schema::default();
        let reserved = [&base.id, &base.time, &base.event, &base.censor, &base.treat];
        let covariates: Vec<String> = headers
            .iter()
            .filter(|h| !reserved.contains(h) && !h.starts_with("obs_"))
            .cloned()
            .collect();
        let observed = covariates
            .iter()
            .filter(|c| headers.contains(&format!("obs_{c}")))
            .map(|c| (c.clone(), format!("obs_{c}")))
            .collect();
        Schema {
            covariates,
            observed,
            ..base
        }
    }
}

/// Header row of a CSV source.
pub fn read_headers<R: Read>(source: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    Ok(rdr.headers()?.iter().map(str::to_string).collect())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_flag(raw: &str, id: &str, col: &str) -> Result<bool> {
    match raw.trim() {
        "1" | "true" | "TRUE" | "1.0" => Ok(true),
        "0" | "false" | "FALSE" | "0.0" => Ok(false),
        other => Err(Error::InvalidValue {
            id: id.into(),
            column: col.into(),
            value: other.into(),
        }),
    }
}

fn parse_num(raw: &str, id: &str, col: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(None);
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::InvalidValue {
            id: id.into(),
            column: col.into(),
            value: raw.into(),
        })
}

/// Reads a long-format CSV into a validated panel sorted by `(id, t)`.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers()?.clone();
    let id_c = column(&headers, &schema.id)?;
    let t_c = column(&headers, &schema.time)?;
    let ev_c = column(&headers, &schema.event)?;
    let ce_c = column(&headers, &schema.censor)?;
    let tr_c = column(&headers, &schema.treat)?;
    let cov_c = schema
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let obs_c = schema
        .covariates
        .iter()
        .map(|c| schema.observed.get(c).map(|h| column(&headers, h)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let base_c = schema
        .baseline
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, SubjectRecord> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(id_c).unwrap_or("").to_string();
        let t_raw = rec.get(t_c).unwrap_or("");
        let t = t_raw
            .trim()
            .parse::<u32>()
            .or_else(|_| {
                t_raw
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64)
                    .map(|v| v as u32)
                    .ok_or(())
            })
            .map_err(|_| Error::InvalidValue {
                id: id.clone(),
                column: schema.time.clone(),
                value: t_raw.into(),
            })?;
        let mut covariates = Vec::with_capacity(cov_c.len());
        let mut observed = Vec::with_capacity(cov_c.len());
        for (j, &c) in cov_c.iter().enumerate() {
            let v = parse_num(rec.get(c).unwrap_or(""), &id, &schema.covariates[j])?;
            let flag = match obs_c[j] {
                Some(oc) => parse_flag(rec.get(oc).unwrap_or(""), &id, &schema.covariates[j])?,
                None => v.is_some(),
            };
            if flag && v.is_none() {
                return Err(Error::InvalidValue {
                    id,
                    column: schema.covariates[j].clone(),
                    value: "flagged observed but empty".into(),
                });
            }
            covariates.push(v.unwrap_or(f64::NAN));
            observed.push(flag);
        }
        let baseline = base_c
            .iter()
            .zip(&schema.baseline)
            .map(|(&c, name)| {
                parse_num(rec.get(c).unwrap_or(""), &id, name)?.ok_or_else(|| Error::InvalidValue {
                    id: id.clone(),
                    column: name.clone(),
                    value: String::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let row = Row {
            t,
            treated: parse_flag(rec.get(tr_c).unwrap_or(""), &id, &schema.treat)?,
            covariates,
            observed,
            event: parse_flag(rec.get(ev_c).unwrap_or(""), &id, &schema.event)?,
            censored: parse_flag(rec.get(ce_c).unwrap_or(""), &id, &schema.censor)?,
        };
        match by_id.get_mut(&id) {
            Some(s) => {
                if s.baseline != baseline {
                    return Err(Error::InvalidValue {
                        id,
                        column: "baseline".into(),
                        value: "differs between rows".into(),
                    });
                }
                s.rows.push(row);
            }
            None => {
                order.push(id.clone());
                by_id.insert(
                    id.clone(),
                    SubjectRecord {
                        id,
                        baseline,
                        rows: vec![row],
                    },
                );
            }
        }
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let mut s = by_id.remove(&id).expect("id recorded");
            s.rows.sort_by_key(|r| r.t);
            s
        })
        .collect();
    Panel::new(schema.covariates.clone(), schema.baseline.clone(), subjects)
}

/// Writes the panel in the layout described by [`Schema::for_panel`].
pub fn write_panel<W: Write>(panel: &Panel, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![
        "id".to_string(),
        "t".into(),
        "treat".into(),
        "event".into(),
        "censor".into(),
    ];
    header.extend(panel.covariate_names.iter().cloned());
    header.extend(panel.covariate_names.iter().map(|c| format!("obs_{c}")));
    header.extend(panel.baseline_names.iter().cloned());
    w.write_record(&header)?;
    for s in &panel.subjects {
        for r in &s.rows {
            let mut rec = vec![
                s.id.clone(),
                r.t.to_string(),
                (r.treated as u8).to_string(),
                (r.event as u8).to_string(),
                (r.censored as u8).to_string(),
            ];
            rec.extend(r.covariates.iter().map(|v| fmt_num(*v)));
            rec.extend(r.observed.iter().map(|o| (*o as u8).to_string()));
            rec.extend(s.baseline.iter().map(|v| fmt_num(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal; empty for non-finite values.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Fills every interval up to exit, carrying the last measured value forward.
///
/// Inserted rows keep the previous treatment status and carry no event or
/// censoring flag. Carried cells are marked unobserved.
pub fn locf_expand(panel: &Panel) -> Result<Panel> {
    let mut subjects = Vec::with_capacity(panel.len());
    for s in &panel.subjects {
        let first = &s.rows[0];
        if first.t != 0 || !first.all_observed() {
            return Err(Error::NoBaselineRow { id: s.id.clone() });
        }
        let mut rows = Vec::with_capacity(s.exit() as usize + 1);
        let mut carried = first.covariates.clone();
        let mut src = s.rows.iter().peekable();
        for t in 0..=s.exit() {
            let row = match src.next_if(|r| r.t == t) {
                Some(r) => {
                    let mut r = r.clone();
                    for ((c, v), seen) in carried.iter_mut().zip(&mut r.covariates).zip(&r.observed) {
                        if *seen {
                            *c = *v;
                        } else {
                            *v = *c;
                        }
                    }
                    r
                }
                None => {
                    let prev: &Row = rows.last().expect("t=0 row present");
                    Row {
                        t,
                        treated: prev.treated,
                        covariates: carried.clone(),
                        observed: vec![false; carried.len()],
                        event: false,
                        censored: false,
                    }
                }
            };
            rows.push(row);
        }
        subjects.push(SubjectRecord {
            id: s.id.clone(),
            baseline: s.baseline.clone(),
            rows,
        });
    }
    panel.with_subjects(subjects)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMode {
    /// Under observation at the start of interval `t`.
    AllAtRisk,
    /// Under observation and started treatment strictly before `t`.
    TreatedAtt,
    /// Under observation and on treatment in interval `t`.
    OnTreatment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskSet {
    /// Indices into [`Panel::subjects`].
    pub members: Vec<usize>,
}

impl RiskSet {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn ids<'a>(&'a self, panel: &'a Panel) -> impl Iterator<Item = &'a str> + 'a {
        self.members.iter().map(|&i| panel.subjects[i].id.as_str())
    }
}

pub fn risk_set(panel: &Panel, t: u32, mode: RiskMode) -> RiskSet {
    let members = panel
        .subjects
        .iter()
        .enumerate()
        .filter(|(_, s)| s.rows[0].t <= t && t <= s.exit())
        .filter(|(_, s)| match mode {
            RiskMode::AllAtRisk => true,
            RiskMode::TreatedAtt => s.start().is_some_and(|st| st < t),
            RiskMode::OnTreatment => s.start().is_some_and(|st| st <= t),
        })
        .map(|(i, _)| i)
        .collect();
    RiskSet { members }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn row(t: u32, treated: bool, l: f64, event: bool) -> Row {
        Row {
            t,
            treated,
            covariates: vec![l],
            observed: vec![true],
            event,
            censored: false,
        }
    }

    fn csv_text() -> &'static str {
        "id,t,treat,event,censor,L,age\n\
         1,0,0,0,0,10,40\n1,1,1,0,0,11,40\n1,2,1,1,0,12,40\n\
         2,0,0,0,0,20,50\n2,1,0,0,0,19,50\n2,2,0,0,1,18,50\n"
    }

    fn schema() -> Schema {
        Schema {
            covariates: vec!["L".into()],
            baseline: vec!["age".into()],
            ..Schema::default()
        }
    }

    #[test]
    fn schema_inference_pairs_flags_with_covariates() {
        let h: Vec<String> = ["id", "t", "treat", "event", "censor", "L", "M", "obs_L"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = Schema::infer(&h);
        assert_eq!(s.covariates, vec!["L", "M"]);
        assert_eq!(s.observed.get("L").map(String::as_str), Some("obs_L"));
        assert!(!s.observed.contains_key("M"));
    }

    #[test]
    fn loads_well_formed_panel() {
        let p = load_panel(csv_text().as_bytes(), &schema()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.t_max(), 2);
        let rows: usize = p.subjects().iter().map(|s| s.rows.len()).sum();
        assert_eq!(rows, 6);
        assert_eq!(p.subjects()[0].start(), Some(1));
        assert_eq!(p.subjects()[1].start(), None);
        assert_eq!(p.subjects()[0].baseline, vec![40.0]);
        let report = p.validate();
        assert!(report.is_valid());
        assert_eq!(report.counts.events, 1);
        assert_eq!(report.counts.censorings, 1);
        assert_eq!(report.counts.treated_subjects, 1);
    }

    #[test]
    fn rejects_treatment_reversal() {
        let text = "id,t,treat,event,censor,L\n1,0,0,0,0,1\n1,1,1,0,0,1\n1,2,0,0,0,1\n";
        let s = Schema {
            covariates: vec!["L".into()],
            ..Schema::default()
        };
        let err = load_panel(text.as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTreatment { t: 2, .. }), "{err:?}");
    }

    #[test]
    fn rejects_duplicates_post_exit_and_missing_columns() {
        let s = Schema {
            covariates: vec!["L".into()],
            ..Schema::default()
        };
        let dup = "id,t,treat,event,censor,L\n1,0,0,0,0,1\n1,0,0,0,0,1\n";
        assert!(matches!(
            load_panel(dup.as_bytes(), &s).unwrap_err(),
            Error::DuplicateRow { t: 0, .. }
        ));
        let post = "id,t,treat,event,censor,L\n1,0,0,1,0,1\n1,1,0,0,0,1\n";
        assert!(matches!(
            load_panel(post.as_bytes(), &s).unwrap_err(),
            Error::PostExitRow { t: 1, .. }
        ));
        let missing = "id,t,treat,event,L\n1,0,0,1,1\n";
        assert!(matches!(
            load_panel(missing.as_bytes(), &s).unwrap_err(),
            Error::MissingColumn(c) if c == "censor"
        ));
    }

    #[test]
    fn schema_round_trips_through_toml() {
        let s = Schema {
            covariates: vec!["marker".into(), "load".into()],
            baseline: vec!["sex".into()],
            observed: [("marker".to_string(), "marker_measured".to_string())].into(),
            ..Schema::default()
        };
        assert_eq!(Schema::from_toml(&s.to_toml()).unwrap(), s);
        let partial = Schema::from_toml("covariates = [\"L\"]\ntime = \"month\"\n").unwrap();
        assert_eq!(partial.time, "month");
        assert_eq!(partial.id, "id");
        assert!(Schema::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn locf_fills_gaps_and_flags_carried_cells() {
        let text = "id,t,treat,event,censor,L\n1,0,0,0,0,10\n1,3,0,0,0,7\n1,4,0,1,0,\n";
        let s = Schema {
            covariates: vec!["L".into()],
            ..Schema::default()
        };
        let p = load_panel(text.as_bytes(), &s).unwrap();
        assert!(!p.is_contiguous());
        let e = locf_expand(&p).unwrap();
        let rows = &e.subjects()[0].rows;
        let vals: Vec<f64> = rows.iter().map(|r| r.covariates[0]).collect();
        let obs: Vec<bool> = rows.iter().map(|r| r.observed[0]).collect();
        assert_eq!(vals, vec![10.0, 10.0, 10.0, 7.0, 7.0]);
        assert_eq!(obs, vec![true, false, false, true, false]);
        assert!(rows[4].event);
        assert!(e.is_contiguous());
    }

    #[test]
    fn locf_is_identity_on_fully_measured_panel() {
        let p = load_panel(csv_text().as_bytes(), &schema()).unwrap();
        assert_eq!(locf_expand(&p).unwrap(), p);
    }

    #[test]
    fn locf_requires_measured_baseline() {
        let text = "id,t,treat,event,censor,L\n1,0,0,0,0,\n1,1,0,0,0,3\n";
        let s = Schema {
            covariates: vec!["L".into()],
            ..Schema::default()
        };
        let p = load_panel(text.as_bytes(), &s).unwrap();
        assert!(matches!(locf_expand(&p).unwrap_err(), Error::NoBaselineRow { .. }));
    }

    #[test]
    fn treated_risk_set_uses_strict_start() {
        let subj = |id: &str, start: Option<u32>| SubjectRecord {
            id: id.into(),
            baseline: vec![],
            rows: (0..=3)
                .map(|t| row(t, start.is_some_and(|s| t >= s), 1.0, false))
                .collect(),
        };
        let p = Panel::new(
            vec!["L".into()],
            vec![],
            vec![subj("1", Some(1)), subj("2", None), subj("3", Some(2))],
        )
        .unwrap();
        let rs = risk_set(&p, 2, RiskMode::TreatedAtt);
        assert_eq!(rs.ids(&p).collect::<Vec<_>>(), vec!["1"]);
        assert_eq!(rs.size(), 1);
        assert_eq!(risk_set(&p, 0, RiskMode::TreatedAtt).size(), 0);
        assert_eq!(risk_set(&p, 0, RiskMode::AllAtRisk).size(), 3);
    }

    #[test]
    fn ids_sort_numerically() {
        let mk = |id: &str| SubjectRecord {
            id: id.into(),
            baseline: vec![],
            rows: vec![row(0, false, 1.0, false)],
        };
        let p = Panel::new(vec!["L".into()], vec![], vec![mk("10"), mk("2"), mk("b"), mk("1")]).unwrap();
        let ids: Vec<&str> = p.subjects().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["1", "2", "10", "b"]);
    }
}
