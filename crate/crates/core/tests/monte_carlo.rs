//! Statistical checks against generators with known behaviour.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use survatt::aalen::{fit_additive, slope_test, SlopeWeight};
use survatt::att::{bootstrap_band, estimate_att, resample_subjects, AttConfig, AttEstimator, BootstrapConfig};
use survatt::counterfactual::{impute_counterfactual, treated_averages, CounterfactualConfig};
use survatt::curve::CumulativeCurve;
use survatt::design::{Formula, TREATMENT};
use survatt::flim::{fit_flim, FlimSpec};
use survatt::panel::{Panel, Row, SubjectRecord};
use survatt::rng::substream;
use survatt::simulate::{generate_cohort, GeneratorParams, Regime, RegimeConfig, SimCohort};
use survatt::study::{replicate_study, Analysis, StudyConfig};
use survatt::weights::{fit_weights, msm_additive, WeightConfig};

fn cohort(regime: Regime, n: usize, seed: u64, params: &GeneratorParams) -> SimCohort {
    generate_cohort(&RegimeConfig {
        regime,
        n,
        seed,
        params: params.clone(),
    })
    .unwrap()
}

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn slope_test_is_uniform_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let unif = Uniform::new(0.0, 1.0).unwrap();
    let mut pvals = Vec::new();
    for rep in 0..500 {
        // Constant hazard 0.1; the covariate is pure noise.
        let subjects = (0..200)
            .map(|i| {
                let mut rows = Vec::new();
                for t in 0..=5u32 {
                    let event = unif.sample(&mut rng) < 0.1;
                    rows.push(Row {
                        t,
                        treated: false,
                        covariates: vec![noise.sample(&mut rng)],
                        observed: vec![true],
                        event,
                        censored: false,
                    });
                    if event {
                        break;
                    }
                }
                SubjectRecord {
                    id: format!("{rep}-{i}"),
                    baseline: vec![],
                    rows,
                }
            })
            .collect();
        let panel = Panel::new(vec!["Z".into()], vec![], subjects).unwrap();
        let fit = fit_additive(&panel, &Formula::full(&panel), None).unwrap();
        pvals.push(slope_test(&fit, "Z", SlopeWeight::default()).unwrap().p_value);
    }
    let d = ks_uniform(pvals);
    assert!(d < 0.1, "KS distance {d}");
}

#[test]
fn slope_test_detects_a_protective_treatment() {
    let params = GeneratorParams {
        a_b: -0.015,
        ..GeneratorParams::default()
    };
    let mut hits = 0;
    let reps = 40;
    for seed in 0..reps {
        let c = cohort(Regime::Randomized, 1000, seed, &params);
        let fit = fit_additive(&c.observed, &Formula::treatment_only(), None).unwrap();
        if slope_test(&fit, TREATMENT, SlopeWeight::default()).unwrap().p_value < 0.01 {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.9 * reps as f64, "{hits}/{reps}");
}

#[test]
fn increment_model_recovers_linear_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let start = Uniform::new(-5.0, 5.0).unwrap();
    let subjects = (0..2000)
        .map(|i| {
            let mut k = start.sample(&mut rng);
            let rows = (0..=4u32)
                .map(|t| {
                    if t > 0 {
                        k += 0.5 * k + noise.sample(&mut rng);
                    }
                    Row {
                        t,
                        treated: false,
                        covariates: vec![k],
                        observed: vec![true],
                        event: false,
                        censored: false,
                    }
                })
                .collect();
            SubjectRecord {
                id: i.to_string(),
                baseline: vec![],
                rows,
            }
        })
        .collect();
    let panel = Panel::new(vec!["K".into()], vec![], subjects).unwrap();
    let fit = fit_flim(&panel, &FlimSpec::new(vec!["K".into()], vec![])).unwrap();
    for t in 1..=4 {
        let slope = fit.betas[t].as_ref().unwrap()[1];
        assert!((slope - 0.5).abs() < 0.05, "t={t}: {slope}");
    }
}

#[test]
fn treated_averages_match_a_group_by_over_the_exported_table() {
    let c = cohort(Regime::One, 1000, 3, &GeneratorParams::default());
    let cf = impute_counterfactual(&c.observed, &CounterfactualConfig::for_panel(&c.observed)).unwrap();
    let avgs = treated_averages(&cf);
    let mut buf = Vec::new();
    cf.write_csv(&mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    // (t) -> (sum observed, sum counterfactual, count)
    let mut groups: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    let mut pending: Option<(String, u32, f64)> = None;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (id, t, value, prov) = (
            &rec[0],
            rec[1].parse::<u32>().unwrap(),
            rec[4].parse::<f64>().unwrap(),
            &rec[5],
        );
        if prov == "observed" {
            pending = Some((id.to_string(), t, value));
        } else {
            let (pid, pt, obs) = pending.take().unwrap();
            assert_eq!((pid.as_str(), pt), (id, t));
            let g = groups.entry(t).or_default();
            g.0 += obs;
            g.1 += value;
            g.2 += 1;
        }
    }
    let person_time: usize = groups.values().map(|g| g.2).sum();
    let on_treatment = c
        .observed
        .subjects()
        .iter()
        .flat_map(|s| &s.rows)
        .filter(|r| r.treated)
        .count();
    assert_eq!(avgs.r.iter().sum::<usize>(), on_treatment);
    assert_eq!(person_time, on_treatment);
    for t in 0..=avgs.t_max {
        match groups.get(&t) {
            Some(&(a, b, n)) => {
                assert_eq!(avgs.r[t as usize], n);
                let (ah, bh) = (
                    avgs.a_hat[t as usize].as_ref().unwrap()[0],
                    avgs.b_hat[t as usize].as_ref().unwrap()[0],
                );
                assert!((ah - a / n as f64).abs() <= 1e-12 * ah.abs().max(1.0));
                assert!((bh - b / n as f64).abs() <= 1e-12 * bh.abs().max(1.0));
            }
            None => assert_eq!(avgs.r[t as usize], 0),
        }
    }
    // Treatment raises the covariate in the generator.
    let later: Vec<usize> = (1..=avgs.t_max as usize).filter(|&t| avgs.r[t] > 0).collect();
    let gap: f64 = later
        .iter()
        .map(|&t| avgs.a_hat[t].as_ref().unwrap()[0] - avgs.b_hat[t].as_ref().unwrap()[0])
        .sum();
    assert!(gap > 0.0);
}

/// Treatment starts at random; hazard and covariate ignore it.
fn null_panel(n: usize, rng: &mut ChaCha8Rng) -> Panel {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let unif = Uniform::new(0.0, 1.0).unwrap();
    let subjects = (0..n)
        .map(|i| {
            let mut l = noise.sample(rng);
            let mut treated = false;
            let mut rows = Vec::new();
            for t in 0..=11u32 {
                if t > 0 {
                    l += 0.3 * noise.sample(rng);
                }
                treated |= unif.sample(rng) < 0.1;
                let event = unif.sample(rng) < 0.03;
                rows.push(Row {
                    t,
                    treated,
                    covariates: vec![l],
                    observed: vec![true],
                    event,
                    censored: false,
                });
                if event {
                    break;
                }
            }
            SubjectRecord {
                id: i.to_string(),
                baseline: vec![],
                rows,
            }
        })
        .collect();
    Panel::new(vec!["L".into()], vec![], subjects).unwrap()
}

#[test]
fn null_treatment_gives_a_shortcut_curve_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reps = 250;
    let mut inside = 0.0;
    for _ in 0..reps {
        let panel = null_panel(1000, &mut rng);
        let est = estimate_att(&panel, &AttConfig::for_panel(&panel)).unwrap();
        let s = &est.shortcut;
        let ok = (0..=s.t_max())
            .filter(|&t| s.at(t).abs() <= 2.0 * s.se(t).unwrap() + 1e-12)
            .count();
        inside += ok as f64 / (s.t_max() + 1) as f64;
    }
    let share = inside / reps as f64;
    assert!(share >= 0.9, "share within 2 SE: {share}");
}

#[test]
fn pure_mediation_shows_up_as_an_indirect_effect() {
    // No direct effect on the hazard; treatment acts through the covariate.
    let params = GeneratorParams {
        a_b: 0.0,
        drift_treated: 1.5,
        ..GeneratorParams::default()
    };
    let reps = 40;
    let (mut direct_inside, mut indirect_sum, mut direct_sum) = (0, 0.0, 0.0);
    let t = params.t_max;
    for seed in 0..reps {
        let c = cohort(Regime::Two, 1000, seed, &params);
        let est = estimate_att(&c.observed, &AttConfig::for_panel(&c.observed)).unwrap();
        let d = &est.mediation_direct;
        if d.at(t).abs() <= 2.0 * d.se(t).unwrap() {
            direct_inside += 1;
        }
        direct_sum += d.at(t);
        indirect_sum += est.mediation_indirect.at(t);
    }
    assert!(direct_inside as f64 >= 0.9 * reps as f64, "{direct_inside}/{reps}");
    assert!(indirect_sum < 0.0);
    assert!(
        indirect_sum.abs() > 3.0 * direct_sum.abs(),
        "{indirect_sum} vs {direct_sum}"
    );
}

#[test]
fn stabilized_treatment_weights_average_near_one() {
    let params = GeneratorParams::default();
    for regime in Regime::CONFOUNDED {
        let c = cohort(regime, 1000, 9, &params);
        let (_, ws) = fit_weights(&c.observed, &WeightConfig::default()).unwrap();
        let mean = ws.summary().mean_treat;
        assert!((0.9..=1.1).contains(&mean), "regime {}: {mean}", regime.label());
    }
}

/// Spearman rank correlation of `y` against its index.
fn trend(y: &[f64]) -> f64 {
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut rank = vec![0.0; n];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r as f64;
    }
    let m = (n - 1) as f64 / 2.0;
    let cov: f64 = (0..n).map(|i| (i as f64 - m) * (rank[i] - m)).sum();
    let var: f64 = (0..n).map(|i| (i as f64 - m).powi(2)).sum();
    cov / var
}

#[test]
fn bootstrap_bands_widen_and_cover_the_truth() {
    let params = GeneratorParams::default();
    let outer = 200;
    let t = params.t_max / 2;
    let mut covered = 0;
    let mut trends = 0.0;
    for seed in 0..outer {
        let c = cohort(Regime::Three, 400, 1000 + seed, &params);
        let config = AttConfig::for_panel(&c.observed);
        let boot = bootstrap_band(
            AttEstimator::Shortcut,
            &c.observed,
            &config,
            &BootstrapConfig {
                replicates: 50,
                level: 0.9,
                seed,
            },
        )
        .unwrap();
        let band = boot.curve.band.as_ref().unwrap();
        let truth = c.truth.at(t);
        if band.lower[t as usize] <= truth && truth <= band.upper[t as usize] {
            covered += 1;
        }
        let width: Vec<f64> = band.upper.iter().zip(&band.lower).map(|(u, l)| u - l).collect();
        trends += trend(&width);
    }
    let coverage = covered as f64 / outer as f64;
    assert!((0.8..=0.95).contains(&coverage), "coverage {coverage}");
    assert!(trends / outer as f64 > 0.0);
}

#[test]
fn a_single_bootstrap_replicate_gives_a_degenerate_band() {
    let c = cohort(Regime::One, 300, 8, &GeneratorParams::default());
    let config = AttConfig::for_panel(&c.observed);
    let boot = BootstrapConfig {
        replicates: 1,
        level: 0.95,
        seed: 17,
    };
    let result = bootstrap_band(AttEstimator::Direct, &c.observed, &config, &boot).unwrap();
    let sample = resample_subjects(&c.observed, &mut substream(17, &[0]));
    let single = estimate_att(&sample, &config).unwrap().direct;
    let band = result.curve.band.unwrap();
    assert_eq!(band.lower, single.values);
    assert_eq!(band.upper, single.values);
}

#[test]
fn covariate_free_dynamics_give_equal_arm_averages() {
    // Noise-free, treatment-independent covariate paths: the increment model
    // reproduces every treated path, so the arms coincide.
    let params = GeneratorParams {
        noise: 0.0,
        drift_treated: -GeneratorParams::default().drift_untreated,
        ..GeneratorParams::default()
    };
    let c = cohort(Regime::One, 500, 12, &params);
    let est = estimate_att(&c.observed, &AttConfig::for_panel(&c.observed)).unwrap();
    let a = &est.averages;
    for t in 0..=a.t_max as usize {
        if let (Some(x), Some(y)) = (&a.a_hat[t], &a.b_hat[t]) {
            assert!(
                (x[0] - y[0]).abs() <= 1e-9 * x[0].abs().max(1.0),
                "t={t}: {} vs {}",
                x[0],
                y[0]
            );
        }
    }
    let delta = est.fit.coefficient_curve(survatt::design::TREATMENT).unwrap();
    for t in 0..=c.observed.t_max() {
        assert!(est.mediation_indirect.at(t).abs() < 1e-10);
        assert!((est.direct.at(t) - delta.at(t)).abs() < 1e-10);
    }
}

/// Pointwise mean of curves on a common grid.
fn mean_of(curves: &[CumulativeCurve]) -> CumulativeCurve {
    let mut m = CumulativeCurve::zeros("mean", curves[0].t_max());
    for c in curves {
        for (v, x) in m.values.iter_mut().zip(&c.values) {
            *v += x / curves.len() as f64;
        }
    }
    m
}

#[test]
fn randomized_msm_matches_the_unweighted_treatment_fit() {
    let params = GeneratorParams::default();
    let (mut msm, mut plain) = (Vec::new(), Vec::new());
    for seed in 0..250 {
        let p = cohort(Regime::Randomized, 1000, seed, &params).observed;
        let (_, ws) = fit_weights(&p, &WeightConfig::default()).unwrap();
        let f = Formula::marginal(&p);
        msm.push(msm_additive(&p, &ws, &f).unwrap().coefficient_curve(TREATMENT).unwrap());
        plain.push(
            fit_additive(&p, &f, None)
                .unwrap()
                .coefficient_curve(TREATMENT)
                .unwrap(),
        );
    }
    let (msm, plain) = (mean_of(&msm), mean_of(&plain));
    let d = msm.sup_distance(&plain);
    assert!(d < 0.1 * plain.range(), "{d} vs range {}", plain.range());
}

#[test]
fn regime_patterns_of_the_mean_curves() {
    let result = replicate_study(&StudyConfig::new(120, 1000, 21)).unwrap();
    let curve = |r: Regime, a: Analysis| result.regime(r).unwrap().mean_curve(a).unwrap();
    let msm: Vec<_> = Regime::CONFOUNDED.iter().map(|r| curve(*r, Analysis::Msm)).collect();
    let scale = msm[1].range();
    for m in &msm {
        assert!(m.sup_distance(&msm[1]) < 0.1 * scale);
    }
    // The target itself depends on who gets treated; the marginal effect does not.
    let att_gap = curve(Regime::One, Analysis::Simulated).sup_distance(&curve(Regime::Three, Analysis::Simulated));
    let msm_gap = msm[0].sup_distance(&msm[2]);
    assert!(att_gap > msm_gap, "{att_gap} vs {msm_gap}");
    // Regime 2 is close to randomized: the marginal and treated-population effects agree.
    let short2 = curve(Regime::Two, Analysis::Shortcut);
    assert!(msm[1].sup_distance(&short2) < 0.05 * scale);
}
