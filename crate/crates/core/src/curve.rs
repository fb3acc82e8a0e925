use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::panel::fmt_num;

/// Pointwise band around a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Right-continuous step function on the interval grid `0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    pub label: String,
    pub times: Vec<u32>,
    pub values: Vec<f64>,
    pub variance: Option<Vec<f64>>,
    pub band: Option<Band>,
}

impl CumulativeCurve {
    pub fn zeros(label: impl Into<String>, t_max: u32) -> Self {
        CumulativeCurve {
            label: label.into(),
            times: (0..=t_max).collect(),
            values: vec![0.0; t_max as usize + 1],
            variance: None,
            band: None,
        }
    }

    pub fn t_max(&self) -> u32 {
        self.times.last().copied().unwrap_or(0)
    }

    /// Value at `t`; clamps to the last grid point beyond the end.
    pub fn at(&self, t: u32) -> f64 {
        let i = (t as usize).min(self.values.len().saturating_sub(1));
        self.values.get(i).copied().unwrap_or(0.0)
    }

    pub fn se(&self, t: u32) -> Option<f64> {
        let i = (t as usize).min(self.values.len().saturating_sub(1));
        self.variance.as_ref().map(|v| v[i].max(0.0).sqrt())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `sup_t |self(t) - other(t)|` over the common grid.
    pub fn sup_distance(&self, other: &CumulativeCurve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn range(&self) -> f64 {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if max.is_finite() {
            max - min
        } else {
            0.0
        }
    }

    /// Pointwise mean of equally gridded curves.
    pub fn mean(label: impl Into<String>, curves: &[CumulativeCurve]) -> Option<Self> {
        let first = curves.first()?;
        let n = curves.len() as f64;
        let mut values = vec![0.0; first.values.len()];
        for c in curves {
            for (acc, v) in values.iter_mut().zip(&c.values) {
                *acc += v;
            }
        }
        values.iter_mut().for_each(|v| *v /= n);
        Some(CumulativeCurve {
            label: label.into(),
            times: first.times.clone(),
            values,
            variance: None,
            band: None,
        })
    }

    /// Lower and upper limits: the band if present, else a normal interval.
    pub fn limits(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if let Some(b) = &self.band {
            return Some((b.lower.clone(), b.upper.clone()));
        }
        let var = self.variance.as_ref()?;
        let z = 1.959963984540054;
        Some(
            self.values
                .iter()
                .zip(var)
                .map(|(v, s2)| {
                    let h = z * s2.max(0.0).sqrt();
                    (v - h, v + h)
                })
                .unzip(),
        )
    }

    /// CSV with columns `t, estimate, se, lower, upper`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["t", "estimate", "se", "lower", "upper"])?;
        let limits = self.limits();
        for (i, t) in self.times.iter().enumerate() {
            let se = self
                .variance
                .as_ref()
                .map(|v| fmt_num(v[i].max(0.0).sqrt()))
                .unwrap_or_default();
            let (lo, hi) = limits
                .as_ref()
                .map(|(l, u)| (fmt_num(l[i]), fmt_num(u[i])))
                .unwrap_or_default();
            w.write_record([t.to_string(), fmt_num(self.values[i]), se, lo, hi])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl CumulativeCurve {
    /// Reads the layout of [`CumulativeCurve::write_csv`]. Limits without a
    /// standard error become a band; its level is not stored and is set to
    /// `level`.
    pub fn read_csv<R: Read>(label: impl Into<String>, source: R, level: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.into()));
        let (t_c, v_c) = (need("t")?, need("estimate")?);
        let (se_c, lo_c, hi_c) = (col("se"), col("lower"), col("upper"));
        let num = |rec: &csv::StringRecord, c: usize, t: &str| -> Result<Option<f64>> {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse().map(Some).map_err(|_| Error::InvalidValue {
                id: format!("t={t}"),
                column: headers[c].to_string(),
                value: raw.into(),
            })
        };
        let mut curve = CumulativeCurve::zeros(label, 0);
        curve.times.clear();
        curve.values.clear();
        let (mut se, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let t_raw = rec.get(t_c).unwrap_or("");
            let t: u32 = t_raw.parse().map_err(|_| Error::InvalidValue {
                id: String::new(),
                column: "t".into(),
                value: t_raw.into(),
            })?;
            if t as usize != curve.times.len() {
                return Err(Error::InvalidValue {
                    id: format!("t={t}"),
                    column: "t".into(),
                    value: "grid must run 0, 1, 2, ...".into(),
                });
            }
            curve.times.push(t);
            curve
                .values
                .push(num(&rec, v_c, t_raw)?.ok_or_else(|| Error::MissingColumn("estimate".into()))?);
            se.push(se_c.map(|c| num(&rec, c, t_raw)).transpose()?.flatten());
            lo.push(lo_c.map(|c| num(&rec, c, t_raw)).transpose()?.flatten());
            hi.push(hi_c.map(|c| num(&rec, c, t_raw)).transpose()?.flatten());
        }
        if curve.times.is_empty() {
            return Err(Error::InvalidValue {
                id: String::new(),
                column: "t".into(),
                value: "empty curve".into(),
            });
        }
        let all = |v: &[Option<f64>]| v.iter().copied().collect::<Option<Vec<f64>>>();
        if let Some(se) = all(&se) {
            curve.variance = Some(se.iter().map(|s| s * s).collect());
        } else if let (Some(lower), Some(upper)) = (all(&lo), all(&hi)) {
            curve.band = Some(Band { level, lower, upper });
        }
        Ok(curve)
    }
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
