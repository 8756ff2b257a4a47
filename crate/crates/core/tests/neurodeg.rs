//! Neurodegenerative-disease example from summary statistics.

use std::time::Instant;

use dosekit::glsfit::{gls_fit, select_model, target_dose, Direction, Selection};
use dosekit::mcptest::{mct_test, reference_set, ContrastSource};
use dosekit::FitBounds;
use dosekit::{AnovaEstimate, CandidateModel, DMatrix, DVector, DoseDesign, ModelFamily, QmcConfig};

pub fn estimate() -> AnovaEstimate {
    let design = DoseDesign::new(vec![0.0, 1.0, 3.0, 10.0, 30.0]).unwrap();
    let mu = DVector::from_vec(vec![-5.099, -4.581, -3.220, -2.879, -3.520]);
    let mut s = DMatrix::from_element(5, 5, 0.0094);
    s.fill_diagonal(0.149);
    AnovaEstimate::new(design, mu, s).unwrap()
}

pub fn candidates() -> Vec<CandidateModel> {
    vec![
        CandidateModel::new(ModelFamily::Emax, vec![1.11]).unwrap(),
        CandidateModel::new(ModelFamily::Quadratic, vec![-0.022]).unwrap(),
        CandidateModel::new(ModelFamily::Exponential, vec![8.867]).unwrap(),
        CandidateModel::linear(),
    ]
}

#[test]
fn multiple_contrast_test() {
    let t = Instant::now();
    let res = mct_test(
        &estimate(),
        &candidates(),
        0.025,
        &ContrastSource::Observed,
        &QmcConfig::default(),
    )
    .unwrap();
    let elapsed = t.elapsed();
    let expected_z = [4.561, 3.680, 1.277, 2.274];
    for (z, e) in res.z.iter().zip(expected_z) {
        assert!((z - e).abs() < 0.02, "z {z} vs {e}");
    }
    assert!((res.critical - 2.275).abs() < 0.01, "critical {}", res.critical);
    assert!((res.adjusted_p[3] - 0.0249).abs() < 0.002, "{:?}", res.adjusted_p);
    assert!(res.adjusted_p[0] < 0.001 && res.adjusted_p[1] < 0.001);
    assert!((res.adjusted_p[2] - 0.1818).abs() < 0.002, "{:?}", res.adjusted_p);
    assert!(res.significant[0] && res.significant[1] && !res.significant[2]);
    // the linear contrast sits on the critical value with these rounded inputs
    assert_eq!(res.significant[3], res.z[3] > res.critical);
    let order: Vec<String> = reference_set(&res, &candidates()).iter().map(|m| m.label()).collect();
    assert_eq!(&order[..2], ["emax", "quadratic"]);
    eprintln!("critical {} adj-p {:?} in {elapsed:?}", res.critical, res.adjusted_p);
}

#[test]
fn emax_fit_and_target_dose() {
    let est = estimate();
    let bounds = FitBounds::new(ModelFamily::Emax, vec![(0.1, 10.0)]).unwrap();
    let fit = gls_fit(&est, ModelFamily::Emax, &bounds).unwrap();
    let theta = fit.theta.as_slice();
    for (v, e) in theta.iter().zip([-5.181, 2.180, 1.187]) {
        assert!((v - e).abs() < 0.02, "{theta:?}");
    }
    assert!((fit.gaic - 10.66).abs() < 0.1, "gAIC {}", fit.gaic);
    let td = target_dose(&fit, 1.4, Direction::Increase).unwrap();
    assert!((td.dose.unwrap() - 2.13).abs() < 0.02, "{td:?}");
}

#[test]
fn gaic_ranks_emax_first() {
    let est = estimate();
    let fits: Vec<_> = [ModelFamily::Emax, ModelFamily::Quadratic, ModelFamily::Linear]
        .into_iter()
        .map(|f| gls_fit(&est, f, &FitBounds::default_for(f, est.design())).unwrap())
        .collect();
    for (fit, e) in fits.iter().zip([10.66, 11.07, 24.22]) {
        assert!((fit.gaic - e).abs() < 0.1, "{} gAIC {}", fit.label, fit.gaic);
    }
    assert_eq!(select_model(&fits, &Selection::MinGaic).unwrap(), 0);
}
