//! Large-sample behaviour of the first-stage estimators on simulated data.

use dosekit::firststage::{coxph_fit, SubjectData, SurvivalRecord};
use dosekit::simharness::{first_stage, generate, Endpoint, SimScenario};
use dosekit::ModelFamily;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

const SEED: u64 = 20_240_101;

/// Per-dose truth on the scale of the first-stage estimate.
fn truth_on_estimate_scale(s: &SimScenario) -> Vec<f64> {
    let f: Vec<f64> = s.doses.iter().map(|&x| s.truth_at(x)).collect();
    if s.endpoint == Endpoint::Tte {
        f[1..].iter().map(|v| v - f[0]).collect()
    } else {
        f
    }
}

/// Standardized estimates `(μ̂ − μ0) / se` for every replicate and coordinate.
fn standardized(s: &SimScenario) -> Vec<Vec<f64>> {
    let mu0 = truth_on_estimate_scale(s);
    (0..s.replicates)
        .into_par_iter()
        .map(|r| {
            let est = first_stage(&generate(s, r)).unwrap();
            (0..mu0.len())
                .map(|i| (est.mu_hat()[i] - mu0[i]) / est.cov()[(i, i)].sqrt())
                .collect()
        })
        .collect()
}

fn moments(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    (mean, m2, m3 / m2.powf(1.5))
}

/// Over 2000 replicates the standardized estimates have mean 0, variance 1 and no skew.
fn check_standard_normal(name: &str, n: usize) {
    let s = SimScenario::preset(name, n, 2000, SEED).unwrap();
    let z = standardized(&s);
    for i in 0..z[0].len() {
        let column: Vec<f64> = z.iter().map(|row| row[i]).collect();
        let (mean, var, skew) = moments(&column);
        assert!(skew.abs() <= 0.15, "{name} n={n} coordinate {i}: skewness {skew}");
        assert!(mean.abs() <= 0.1, "{name} n={n} coordinate {i}: mean {mean}");
        assert!((var - 1.0).abs() <= 0.1, "{name} n={n} coordinate {i}: variance {var}");
    }
}

#[test]
fn standardized_estimates_are_standard_normal_at_large_n() {
    for endpoint in Endpoint::ALL {
        check_standard_normal(&format!("table1-{}-emax", endpoint.name()), 1000);
    }
}

#[test]
fn cox_estimates_are_centred_at_moderate_n() {
    check_standard_normal("table1-tte-emax", 300);
}

#[test]
fn count_truth_row_is_the_printed_one() {
    let s = SimScenario::preset("table1-count-emax", 10, 1, SEED).unwrap();
    assert_eq!(s.family, ModelFamily::Emax);
    assert_eq!(s.truth, vec![2.0, -0.84, 0.05]);
}

#[test]
fn binary_placebo_rate_and_tte_censoring() {
    let s = SimScenario::preset("table1-binary-emax", 200_000, 1, SEED).unwrap();
    let SubjectData::Binary(rows) = generate(&s, 0) else { panic!("binary data expected") };
    let rate = rows[0].successes as f64 / rows[0].trials as f64;
    assert!((s.truth_at(0.0) + 1.734).abs() < 1e-12);
    assert!((rate - 0.150).abs() < 0.003, "placebo rate {rate}");

    let s = SimScenario::preset("table1-tte-emax", 200_000, 1, SEED).unwrap();
    let SubjectData::TimeToEvent(rows) = generate(&s, 0) else { panic!("tte data expected") };
    let placebo: Vec<_> = rows.iter().filter(|r| r.dose == 0.0).collect();
    let censored = placebo.iter().filter(|r| !r.event).count() as f64 / placebo.len() as f64;
    assert!(censored < 2e-4, "placebo censoring {censored}");
}

#[test]
fn cox_null_effect_is_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let exp = Exp::new(1.0).unwrap();
    let rows: Vec<SurvivalRecord> = (0..400)
        .map(|i| SurvivalRecord {
            dose: (i % 2) as f64,
            time: exp.sample(&mut rng),
            event: true,
        })
        .collect();
    let (_, fit) = coxph_fit(&rows).unwrap();
    let z = fit.log_hr[0] / fit.cov[(0, 0)].sqrt();
    assert!(z.abs() < 3.0, "null log-HR z = {z}");
}
