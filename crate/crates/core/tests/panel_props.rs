mod common;

use common::{row, small_panel, subject};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survatt::panel::{load_panel, locf_expand, write_panel, Panel, Row, Schema, SubjectRecord};
use survatt::Error;

/// Subjects with rows at a random subset of intervals (always 0 and exit)
/// and random measurement gaps in the rows that exist.
fn sparse_panel() -> impl Strategy<Value = Panel> {
    prop::collection::vec(
        (
            1u32..7,
            prop::collection::vec((any::<bool>(), prop::option::weighted(0.6, -9.0f64..9.0)), 7),
            any::<bool>(),
        ),
        1..8,
    )
    .prop_map(|specs| {
        let subjects = specs
            .into_iter()
            .enumerate()
            .map(|(i, (exit, cells, event))| {
                let rows = (0..=exit)
                    .filter(|&t| t == 0 || t == exit || cells[t as usize].0)
                    .map(|t| {
                        let v = if t == 0 {
                            Some(cells[0].1.unwrap_or(1.5))
                        } else {
                            cells[t as usize].1
                        };
                        Row {
                            t,
                            treated: false,
                            covariates: vec![v.unwrap_or(f64::NAN)],
                            observed: vec![v.is_some()],
                            event: t == exit && event,
                            censored: false,
                        }
                    })
                    .collect();
                SubjectRecord {
                    id: format!("p{i}"),
                    baseline: vec![],
                    rows,
                }
            })
            .collect();
        Panel::new(vec!["L".into()], vec![], subjects).unwrap()
    })
}

fn round_trip(panel: &Panel) -> Panel {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf).unwrap();
    load_panel(buf.as_slice(), &Schema::for_panel(panel)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn csv_round_trip_is_lossless(panel in small_panel(6, 10)) {
        prop_assert_eq!(round_trip(&panel), panel);
    }

    #[test]
    fn sparse_round_trip_keeps_missing_cells(panel in sparse_panel()) {
        let back = round_trip(&panel);
        for (a, b) in panel.subjects().iter().zip(back.subjects()) {
            for (x, y) in a.rows.iter().zip(&b.rows) {
                prop_assert_eq!(x.observed.clone(), y.observed.clone());
                prop_assert!(x.covariates[0] == y.covariates[0] || (!x.observed[0] && y.covariates[0].is_nan()));
            }
        }
    }

    #[test]
    fn locf_matches_last_measured_value(panel in sparse_panel()) {
        let full = locf_expand(&panel).unwrap();
        prop_assert!(full.is_contiguous());
        for (s, e) in panel.subjects().iter().zip(full.subjects()) {
            prop_assert_eq!(e.rows.len() as u32, s.exit() + 1);
            prop_assert_eq!(e.had_event(), s.had_event());
            for t in 0..=s.exit() {
                let expected = s
                    .rows
                    .iter()
                    .rfind(|r| r.t <= t && r.observed[0])
                    .map(|r| r.covariates[0])
                    .unwrap();
                let got = e.row_at(t).unwrap();
                prop_assert_eq!(got.covariates[0], expected);
                let measured = s.row_at(t).is_some_and(|r| r.observed[0]);
                prop_assert_eq!(got.observed[0], measured);
            }
        }
    }
}

#[test]
fn locf_on_a_complete_panel_is_the_identity() {
    let p = Panel::new(
        vec!["L".into()],
        vec![],
        vec![subject("a", vec![row(0, false, 1.0, false), row(1, true, 2.0, true)])],
    )
    .unwrap();
    assert_eq!(locf_expand(&p).unwrap(), p);
}

fn load(text: &str) -> Result<Panel, Error> {
    load_panel(
        text.as_bytes(),
        &Schema {
            covariates: vec!["L".into()],
            ..Schema::default()
        },
    )
}

#[test]
fn malformed_input_is_rejected_with_the_right_kind() {
    let header = "id,t,treat,event,censor,L\n";
    let cases = [
        ("1,0,1,0,0,3\n1,1,0,0,0,3\n", "non_monotone_treatment"),
        ("1,0,0,0,0,3\n1,0,0,0,0,3\n", "duplicate_row"),
        ("1,0,0,1,0,3\n1,1,0,0,0,3\n", "post_exit_row"),
        ("1,0,0,0,0,abc\n", "invalid_value"),
        ("1,0,0,1,1,3\n", "invalid_value"),
        ("1,-1,0,0,0,3\n", "invalid_value"),
    ];
    for (body, kind) in cases {
        let err = load(&format!("{header}{body}")).unwrap_err();
        assert_eq!(err.kind(), kind, "{body}");
    }
    let err = load("id,t,treat,event,L\n1,0,0,0,3\n").unwrap_err();
    assert!(matches!(err, Error::MissingColumn(c) if c == "censor"));
}

#[test]
fn unmeasured_baseline_blocks_expansion() {
    let p = load("id,t,treat,event,censor,L\n1,0,0,0,0,\n1,1,0,1,0,2\n").unwrap();
    assert!(matches!(locf_expand(&p), Err(Error::NoBaselineRow { .. })));
}

#[test]
fn large_monthly_file_keeps_every_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(2161);
    let mut csv = String::from("id,t,event,censor,treat,marker,age\n");
    for i in 0..2161 {
        let exit = rng.random_range(0..60u32);
        let start = rng.random_range(0..90u32);
        let fate = rng.random_range(0..3u8);
        let age = rng.random_range(20..70);
        for t in 0..=exit {
            let last = t == exit;
            let marker = if t == 0 || rng.random_bool(0.3) {
                format!("{:.1}", rng.random_range(5.0..35.0))
            } else {
                String::new()
            };
            csv += &format!(
                "{i},{t},{},{},{},{marker},{age}\n",
                u8::from(last && fate == 1),
                u8::from(last && fate == 2),
                u8::from(t >= start)
            );
        }
    }
    let schema = Schema::from_toml("covariates = [\"marker\"]\nbaseline = [\"age\"]").unwrap();
    let panel = load_panel(csv.as_bytes(), &schema).unwrap();
    let rows: usize = panel.subjects().iter().map(|s| s.rows.len()).sum();
    assert_eq!(rows, csv.lines().count() - 1);
    assert_eq!(panel.len(), 2161);
    let expanded = locf_expand(&panel).unwrap();
    assert_eq!(expanded.subjects().iter().map(|s| s.rows.len()).sum::<usize>(), rows);
}
