//! Binary-endpoint example: acute migraine trial, pain free at two hours.

use std::time::Instant;

use dosekit::firststage::{logistic_saturated, BinomialCount};
use dosekit::glsfit::gls_fit;
use dosekit::mcptest::{mct_test, ContrastSource};
use dosekit::{AnovaEstimate, CandidateModel, FitBounds, ModelFamily, QmcConfig};

pub const DOSES: [f64; 8] = [0.0, 2.5, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
const N: [u64; 8] = [133, 32, 44, 63, 63, 65, 59, 58];
const RESPONDERS: [u64; 8] = [13, 4, 5, 16, 12, 14, 14, 21];

pub fn estimate() -> AnovaEstimate {
    let rows: Vec<BinomialCount> = DOSES
        .iter()
        .zip(N.iter().zip(RESPONDERS))
        .map(|(&dose, (&trials, successes))| BinomialCount {
            dose,
            successes,
            trials,
        })
        .collect();
    logistic_saturated(&rows, false).unwrap()
}

pub fn candidates() -> Vec<CandidateModel> {
    let sig = |ed50: f64, h: f64| CandidateModel::new(ModelFamily::SigEmax, vec![ed50, h]).unwrap();
    vec![
        sig(2.5, 1.0),
        sig(10.0, 1.0),
        sig(50.0, 3.0),
        sig(100.0, 2.0),
        CandidateModel::new(ModelFamily::Quadratic, vec![-1.0 / 250.0]).unwrap(),
    ]
}

#[test]
fn placebo_group_closed_form() {
    let est = estimate();
    assert!((est.mu_hat()[0] - (13.0f64 / 120.0).ln()).abs() < 1e-12);
    assert!((est.cov()[(0, 0)] - 133.0 / (13.0 * 120.0)).abs() < 1e-12);
}

#[test]
fn all_contrasts_significant_and_sigemax_beats_quadratic() {
    let t = Instant::now();
    let est = estimate();
    let mut models = candidates();
    dosekit::drmodels::assign_labels(&mut models);
    let res = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &QmcConfig::default()).unwrap();
    assert!(res.significant.iter().all(|&s| s), "z {:?} crit {}", res.z, res.critical);

    let sig = gls_fit(&est, ModelFamily::SigEmax, &FitBounds::default_for(ModelFamily::SigEmax, est.design())).unwrap();
    let quad = gls_fit(&est, ModelFamily::Quadratic, &FitBounds::default_for(ModelFamily::Quadratic, est.design())).unwrap();
    assert!(sig.gaic < quad.gaic, "sigEmax {} vs quadratic {}", sig.gaic, quad.gaic);
    eprintln!("z {:?} crit {:.3} gAIC sigEmax {:.3} quadratic {:.3} in {:?}", res.z, res.critical, sig.gaic, quad.gaic, t.elapsed());
    assert!(t.elapsed().as_secs_f64() < 5.0);
}
