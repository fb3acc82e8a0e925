use std::ffi::{CStr, CString};
use std::io::Write;
use std::ptr;

use survatt::att::{estimate_att, AttConfig};
use survatt::simulate::{generate_cohort, GeneratorParams, Regime, RegimeConfig};
use survatt_ffi::*;

fn last_error() -> String {
    let p = survatt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulate(regime: u32, n: usize, seed: u64) -> *mut SurvattPanel {
    let mut panel = ptr::null_mut();
    assert_eq!(
        unsafe { survatt_panel_simulate(regime, n, seed, &mut panel) },
        SurvattStatus::Ok
    );
    panel
}

fn curve(att: *const SurvattAtt, which: SurvattCurve) -> (Vec<f64>, Vec<f64>) {
    let mut len = 0;
    assert_eq!(unsafe { survatt_att_len(att, &mut len) }, SurvattStatus::Ok);
    let (mut v, mut s) = (vec![0.0; len], vec![0.0; len]);
    let st = unsafe { survatt_att_curve(att, which, v.as_mut_ptr(), s.as_mut_ptr(), len) };
    assert_eq!(st, SurvattStatus::Ok);
    (v, s)
}

#[test]
fn estimates_match_the_library() {
    let panel = simulate(2, 400, 11);
    let (mut n, mut t_max) = (0, 0);
    unsafe {
        assert_eq!(survatt_panel_subject_count(panel, &mut n), SurvattStatus::Ok);
        assert_eq!(survatt_panel_t_max(panel, &mut t_max), SurvattStatus::Ok);
    }
    assert_eq!(n, 400);
    let mut att = ptr::null_mut();
    assert_eq!(
        unsafe { survatt_att_estimate(panel, SurvattTiming::Lagged, false, &mut att) },
        SurvattStatus::Ok
    );

    let cohort = generate_cohort(&RegimeConfig {
        regime: Regime::Two,
        n: 400,
        seed: 11,
        params: GeneratorParams::default(),
    })
    .unwrap();
    assert_eq!(t_max, cohort.observed.t_max());
    let est = estimate_att(&cohort.observed, &AttConfig::for_panel(&cohort.observed)).unwrap();

    let (direct, direct_se) = curve(att, SurvattCurve::Direct);
    let (shortcut, _) = curve(att, SurvattCurve::Shortcut);
    let (md, _) = curve(att, SurvattCurve::MediationDirect);
    let (mi, _) = curve(att, SurvattCurve::MediationIndirect);
    assert_eq!(direct, est.direct.values);
    assert_eq!(shortcut, est.shortcut.values);
    for t in 0..direct.len() {
        assert_eq!(md[t] + mi[t], direct[t]);
        let se = est.direct.se(t as u32).unwrap_or(f64::NAN);
        assert!(se.to_bits() == direct_se[t].to_bits());
    }
    unsafe {
        survatt_att_free(att);
        survatt_panel_free(panel);
    }
}

#[test]
fn csv_panels_are_read_with_inferred_roles() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "id,t,event,censor,treat,L").unwrap();
    for (id, rows) in [("a", 3), ("b", 2), ("c", 4)] {
        for t in 0..rows {
            let last = t + 1 == rows;
            writeln!(
                f,
                "{id},{t},{},0,{},{}",
                u8::from(last && id != "c"),
                u8::from(id == "a" && t > 0),
                1.0 + t as f64
            )
            .unwrap();
        }
    }
    let path = CString::new(f.path().to_str().unwrap()).unwrap();
    let mut panel = ptr::null_mut();
    assert_eq!(
        unsafe { survatt_panel_read_csv(path.as_ptr(), ptr::null(), &mut panel) },
        SurvattStatus::Ok
    );
    let mut n = 0;
    unsafe {
        survatt_panel_subject_count(panel, &mut n);
        survatt_panel_free(panel);
    }
    assert_eq!(n, 3);
}

#[test]
fn failures_report_status_and_message() {
    let mut panel = ptr::null_mut();
    unsafe {
        assert_eq!(
            survatt_panel_simulate(7, 10, 1, &mut panel),
            SurvattStatus::InvalidArgument
        );
        assert!(last_error().contains("regime 7"));
        assert!(panel.is_null());

        assert_eq!(
            survatt_panel_simulate(1, 10, 1, ptr::null_mut()),
            SurvattStatus::NullArgument
        );
        assert!(last_error().contains("out"));

        let missing = CString::new("/nonexistent/panel.csv").unwrap();
        assert_eq!(
            survatt_panel_read_csv(missing.as_ptr(), ptr::null(), &mut panel),
            SurvattStatus::Io
        );
        assert!(last_error().starts_with("io:"));

        let bad_schema = CString::new("id = [").unwrap();
        assert_eq!(
            survatt_panel_read_csv(missing.as_ptr(), bad_schema.as_ptr(), &mut panel),
            SurvattStatus::Config
        );

        let mut att = ptr::null_mut();
        assert_eq!(
            survatt_att_estimate(ptr::null(), SurvattTiming::Lagged, false, &mut att),
            SurvattStatus::NullArgument
        );
        let mut len = 0;
        assert_eq!(survatt_att_len(ptr::null(), &mut len), SurvattStatus::NullArgument);
        survatt_panel_free(ptr::null_mut());
        survatt_att_free(ptr::null_mut());
    }
}

#[test]
fn untreated_panels_are_rejected() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "id,t,event,censor,treat,L\na,0,0,0,0,1\na,1,1,0,0,2\nb,0,0,1,0,3").unwrap();
    let path = CString::new(f.path().to_str().unwrap()).unwrap();
    let mut panel = ptr::null_mut();
    let mut att = ptr::null_mut();
    unsafe {
        assert_eq!(
            survatt_panel_read_csv(path.as_ptr(), ptr::null(), &mut panel),
            SurvattStatus::Ok
        );
        assert_eq!(
            survatt_att_estimate(panel, SurvattTiming::Concurrent, false, &mut att),
            SurvattStatus::NoTreatedPersonTime
        );
        assert!(last_error().starts_with("no_treated_person_time"));
        assert!(att.is_null());
        survatt_panel_free(panel);
    }
}

#[test]
fn short_buffers_are_refused() {
    let panel = simulate(1, 300, 5);
    let mut att = ptr::null_mut();
    unsafe {
        assert_eq!(
            survatt_att_estimate(panel, SurvattTiming::Lagged, false, &mut att),
            SurvattStatus::Ok
        );
        let mut v = [0.0; 3];
        assert_eq!(
            survatt_att_curve(att, SurvattCurve::Shortcut, v.as_mut_ptr(), ptr::null_mut(), v.len()),
            SurvattStatus::InvalidArgument
        );
        assert_eq!(v, [0.0; 3]);
        assert_eq!(
            survatt_att_curve(att, SurvattCurve::Shortcut, ptr::null_mut(), ptr::null_mut(), 12),
            SurvattStatus::NullArgument
        );
        survatt_att_free(att);
        survatt_panel_free(panel);
    }
}

#[test]
fn errors_are_kept_per_thread() {
    let mut panel = ptr::null_mut();
    unsafe { survatt_panel_simulate(9, 1, 1, &mut panel) };
    std::thread::spawn(|| assert!(survatt_last_error_message().is_null()))
        .join()
        .unwrap();
    assert!(last_error().contains("regime 9"));
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(survatt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
