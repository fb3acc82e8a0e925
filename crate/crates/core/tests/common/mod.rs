#![allow(dead_code)]

use proptest::prelude::*;
use survatt::panel::{Panel, Row, SubjectRecord};

/// One subject: exit interval, outcome flag (0 none, 1 event, 2 censored),
/// treatment start, and covariate values per interval.
pub type SubjectSpec = (u32, u8, Option<u32>, Vec<f64>);

pub fn subject_spec(t_max: u32) -> impl Strategy<Value = SubjectSpec> {
    (0..=t_max, 0u8..3, prop::option::of(0..=t_max)).prop_flat_map(|(exit, out, start)| {
        (
            Just(exit),
            Just(out),
            Just(start),
            prop::collection::vec(-3.0f64..3.0, exit as usize + 1),
        )
    })
}

/// Random small panels with one covariate `L` and at least one event.
pub fn small_panel(t_max: u32, max_n: usize) -> impl Strategy<Value = Panel> {
    prop::collection::vec(subject_spec(t_max), 2..=max_n)
        .prop_filter("needs an event", |v| v.iter().any(|s| s.1 == 1))
        .prop_map(|specs| build_panel(&specs))
}

pub fn build_panel(specs: &[SubjectSpec]) -> Panel {
    let subjects = specs
        .iter()
        .enumerate()
        .map(|(i, (exit, out, start, values))| SubjectRecord {
            id: format!("s{i:03}"),
            baseline: vec![],
            rows: (0..=*exit)
                .map(|t| Row {
                    t,
                    treated: start.is_some_and(|s| t >= s),
                    covariates: vec![values[t as usize]],
                    observed: vec![true],
                    event: t == *exit && *out == 1,
                    censored: t == *exit && *out == 2,
                })
                .collect(),
        })
        .collect();
    Panel::new(vec!["L".into()], vec![], subjects).expect("valid by construction")
}

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

pub fn subject(id: &str, rows: Vec<Row>) -> SubjectRecord {
    SubjectRecord {
        id: id.into(),
        baseline: vec![],
        rows,
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
