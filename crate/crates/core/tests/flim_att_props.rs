mod common;

use common::close;
use proptest::prelude::*;
use survatt::att::{att_direct, att_shortcut, estimate_att, mediation_decompose, AttConfig};
use survatt::counterfactual::{build_manipulated_panel, impute_counterfactual, CounterfactualConfig};
use survatt::design::{Formula, TREATMENT};
use survatt::flim::{fit_flim, impute_hypothetical, FlimSpec, Horizon, Provenance};
use survatt::panel::{Panel, Row, SubjectRecord};
use survatt::simulate::{generate_cohort, GeneratorParams, Regime, RegimeConfig};

fn k_panel(values: &[Vec<Option<f64>>]) -> Panel {
    let subjects = values
        .iter()
        .enumerate()
        .map(|(i, v)| SubjectRecord {
            id: format!("{i}"),
            baseline: vec![],
            rows: v
                .iter()
                .enumerate()
                .map(|(t, x)| Row {
                    t: t as u32,
                    treated: false,
                    covariates: vec![x.unwrap_or(f64::NAN)],
                    observed: vec![x.is_some()],
                    event: false,
                    censored: false,
                })
                .collect(),
        })
        .collect();
    Panel::new(vec!["K".into()], vec![], subjects).unwrap()
}

/// Trajectories of length 4 with a measured start and random gaps.
fn trajectories() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    prop::collection::vec(
        (
            -5.0f64..5.0,
            prop::collection::vec(prop::option::weighted(0.7, -5.0f64..5.0), 3),
        ),
        8..20,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(x0, rest)| std::iter::once(Some(x0)).chain(rest).collect())
            .collect()
    })
}

fn spec() -> FlimSpec {
    FlimSpec::new(vec!["K".into()], vec![])
}

fn cohort(regime: Regime, n: usize, seed: u64) -> Panel {
    generate_cohort(&RegimeConfig {
        regime,
        n,
        seed,
        params: GeneratorParams::default(),
    })
    .unwrap()
    .observed
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn complete_data_imputes_to_itself(v in trajectories()) {
        let full: Vec<Vec<Option<f64>>> = v.iter().map(|r| r.iter().map(|x| x.or(Some(0.25))).collect()).collect();
        let p = k_panel(&full);
        let fit = fit_flim(&p, &spec()).unwrap();
        let imp = impute_hypothetical(&fit, &p, Horizon::Exit).unwrap();
        for (i, s) in p.subjects().iter().enumerate() {
            for (k, r) in s.rows.iter().enumerate() {
                prop_assert_eq!(imp.values[i][k][0], r.covariates[0]);
                prop_assert_eq!(imp.provenance[i][k][0], Provenance::Observed);
            }
        }
    }

    #[test]
    fn observed_cells_are_never_altered(v in trajectories()) {
        let p = k_panel(&v);
        let Ok(fit) = fit_flim(&p, &spec()) else { return Ok(()) };
        let Ok(imp) = impute_hypothetical(&fit, &p, Horizon::Exit) else { return Ok(()) };
        for (i, s) in p.subjects().iter().enumerate() {
            for (k, r) in s.rows.iter().enumerate() {
                if r.observed[0] {
                    prop_assert_eq!(imp.values[i][k][0], r.covariates[0]);
                    prop_assert_eq!(imp.provenance[i][k][0], Provenance::Observed);
                } else {
                    prop_assert_eq!(imp.provenance[i][k][0], Provenance::Imputed);
                }
            }
        }
    }

    #[test]
    fn coefficients_only_see_their_own_interval(v in trajectories(), bump in -3.0f64..3.0) {
        let p = k_panel(&v);
        let mut w = v.clone();
        for r in &mut w {
            r[3] = r[3].map(|x| x + bump);
        }
        let q = k_panel(&w);
        let a = fit_flim(&p, &spec()).unwrap();
        let b = fit_flim(&q, &spec()).unwrap();
        prop_assert_eq!(&a.betas[1], &b.betas[1]);
        prop_assert_eq!(&a.betas[2], &b.betas[2]);
    }

    #[test]
    fn imputation_is_affine_equivariant(v in trajectories(), a in 0.2f64..5.0, b in -10.0f64..10.0) {
        let p = k_panel(&v);
        let q = k_panel(&v.iter().map(|r| r.iter().map(|x| x.map(|x| a * x + b)).collect()).collect::<Vec<_>>());
        let (Ok(fp), Ok(fq)) = (fit_flim(&p, &spec()), fit_flim(&q, &spec())) else { return Ok(()) };
        let (Ok(ip), Ok(iq)) = (impute_hypothetical(&fp, &p, Horizon::Exit), impute_hypothetical(&fq, &q, Horizon::Exit)) else {
            return Ok(());
        };
        for (x, y) in ip.values.iter().flatten().zip(iq.values.iter().flatten()) {
            prop_assert!(close(a * x[0] + b, y[0], 1e-7), "{} vs {}", a * x[0] + b, y[0]);
        }
    }
}

#[test]
fn hand_examples() {
    // beta = 1 from (1 -> 2) and (2 -> 4) without a constant.
    let p = k_panel(&[vec![Some(1.0), Some(2.0)], vec![Some(2.0), Some(4.0)]]);
    let fit = fit_flim(
        &p,
        &FlimSpec {
            constant: false,
            ..spec()
        },
    )
    .unwrap();
    assert_eq!(fit.betas[1].as_deref(), Some(&[1.0][..]));
    // One step from 2 with beta = 1 gives 4.
    let q = k_panel(&[vec![Some(2.0), None]]);
    let imp = impute_hypothetical(&fit, &q, Horizon::Exit).unwrap();
    assert_eq!(imp.values[0][1], vec![4.0]);
}

#[test]
fn decomposition_is_exactly_additive_on_simulated_cohorts() {
    for (seed, regime) in [(1, Regime::One), (2, Regime::Two), (3, Regime::Three)] {
        let panel = cohort(regime, 300, seed);
        let est = estimate_att(&panel, &AttConfig::for_panel(&panel)).unwrap();
        for t in 0..=panel.t_max() {
            assert_eq!(
                est.mediation_direct.at(t) + est.mediation_indirect.at(t),
                est.direct.at(t),
                "t={t}"
            );
        }
    }
}

#[test]
fn zero_covariate_path_leaves_only_the_treatment_coefficient() {
    let panel = cohort(Regime::Two, 300, 4);
    let est = estimate_att(&panel, &AttConfig::for_panel(&panel)).unwrap();
    let mut fit = est.fit.clone();
    let j = fit.coef_index("L").unwrap();
    for row in fit.increments.iter_mut() {
        row[j] = 0.0;
    }
    let direct = att_direct(&fit, &est.averages).unwrap();
    let delta = fit.coefficient_curve(TREATMENT).unwrap();
    assert_eq!(direct.values, delta.values);
    let (_, indirect) = mediation_decompose(&fit, &est.averages).unwrap();
    assert!(indirect.values.iter().all(|v| *v == 0.0));
}

#[test]
fn shortcut_is_invariant_to_affine_covariate_rescaling() {
    let panel = cohort(Regime::Three, 400, 5);
    let rescaled = panel
        .with_subjects(
            panel
                .subjects()
                .iter()
                .cloned()
                .map(|mut s| {
                    for r in &mut s.rows {
                        r.covariates[0] = 0.1 * r.covariates[0] - 3.0;
                    }
                    s
                })
                .collect(),
        )
        .unwrap();
    let shortcut = |p: &Panel| {
        let cf = impute_counterfactual(p, &CounterfactualConfig::for_panel(p)).unwrap();
        att_shortcut(&build_manipulated_panel(&cf), &Formula::full(p), None).unwrap()
    };
    let a = shortcut(&panel);
    let b = shortcut(&rescaled);
    for t in 0..=panel.t_max() {
        assert!(close(a.at(t), b.at(t), 1e-8), "t={t}: {} vs {}", a.at(t), b.at(t));
    }
}

#[test]
fn without_covariates_the_shortcut_is_the_raw_treatment_fit() {
    let panel = cohort(Regime::One, 300, 6);
    let bare = Panel::new(
        vec![],
        vec![],
        panel
            .subjects()
            .iter()
            .cloned()
            .map(|mut s| {
                for r in &mut s.rows {
                    r.covariates.clear();
                    r.observed.clear();
                }
                s
            })
            .collect(),
    )
    .unwrap();
    let est = estimate_att(&bare, &AttConfig::for_panel(&bare)).unwrap();
    let raw = survatt::aalen::fit_additive(&bare, &Formula::treatment_only(), None)
        .unwrap()
        .coefficient_curve(TREATMENT)
        .unwrap();
    assert_eq!(est.shortcut.values, raw.values);
    assert_eq!(est.direct.values, raw.values);
}
