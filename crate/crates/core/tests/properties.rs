//! Property tests checked against independent oracles.

use dosekit::drmodels::{eval_full, eval_standardized, gradient_full, guesstimate_from_anchor};
use dosekit::firststage::{coxph_fit, logistic_saturated, BinomialCount, SurvivalRecord};
use dosekit::glsfit::{criterion_at, gls_fit};
use dosekit::linalg::placebo_difference_matrix;
use dosekit::mcptest::{mct_test, ContrastSource};
use dosekit::mvnorm::{adjusted_pvalues, critical_value, mvn_equicoordinate, mvn_rect};
use dosekit::numeric::{dnorm, nelder_mead, pnorm, NelderMeadOptions};
use dosekit::optcontrast::{noncentrality, optimal_contrast, optimal_contrast_placebo_adjusted};
use dosekit::{
    AnovaEstimate, CandidateModel, CorrMatrix, DMatrix, DVector, DoseDesign, FitBounds, ModelFamily,
    QmcConfig,
};
use proptest::prelude::*;

fn spd(k: usize, entries: &[f64], ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |i, j| entries[i * k + j]);
    &a * a.transpose() + DMatrix::identity(k, k) * ridge
}

/// Shape vector and covariance for a random contrast problem.
fn contrast_problem() -> impl Strategy<Value = (DVector<f64>, DMatrix<f64>)> {
    (3usize..=8).prop_flat_map(|k| {
        (
            prop::collection::vec(-2.0f64..2.0, k),
            prop::collection::vec(-1.0f64..1.0, k * k),
            0.05f64..1.0,
        )
            .prop_filter_map("shape must vary", move |(mu, a, ridge)| {
                let mu = DVector::from_vec(mu);
                (mu.max() - mu.min() > 0.1).then(|| (mu, spd(k, &a, ridge)))
            })
    })
}

fn shape_params(family: ModelFamily) -> BoxedStrategy<Vec<f64>> {
    match family {
        ModelFamily::Linear => Just(vec![]).boxed(),
        ModelFamily::Emax => (0.05f64..5.0).prop_map(|e| vec![e]).boxed(),
        ModelFamily::SigEmax => (0.1f64..5.0, 0.5f64..5.0).prop_map(|(e, h)| vec![e, h]).boxed(),
        ModelFamily::Quadratic => (-1.0f64..0.5).prop_map(|d| vec![d]).boxed(),
        ModelFamily::Exponential => (0.2f64..5.0).prop_map(|d| vec![d]).boxed(),
    }
}

fn family() -> impl Strategy<Value = ModelFamily> {
    prop::sample::select(ModelFamily::ALL.to_vec())
}

fn full_theta() -> impl Strategy<Value = (ModelFamily, Vec<f64>)> {
    family().prop_flat_map(|f| {
        (Just(f), -3.0f64..3.0, -3.0f64..3.0, shape_params(f)).prop_map(|(f, t0, t1, shape)| {
            let mut theta = vec![t0, t1];
            theta.extend(shape);
            (f, theta)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_central_differences((family, theta) in full_theta(), x in 0.01f64..2.0) {
        let g = gradient_full(family, &theta, x);
        for j in 0..theta.len() {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (eval_full(family, &up, x) - eval_full(family, &dn, x)) / (2.0 * h);
            prop_assert!(
                (g[j] - fd).abs() <= 1e-5 * g[j].abs().max(1e-3),
                "{family} param {j}: analytic {} vs fd {fd}", g[j]
            );
        }
    }

    #[test]
    fn full_model_decomposes((family, theta) in full_theta(), x in 0.0f64..2.0) {
        let f0 = eval_standardized(family, &theta[2..], x);
        prop_assert_eq!(eval_full(family, &theta, x), theta[0] + theta[1] * f0);
    }

    #[test]
    fn anchor_round_trip(fam in prop::sample::select(vec![ModelFamily::Emax, ModelFamily::Exponential, ModelFamily::Quadratic]),
                         frac in 0.05f64..0.95, dose_frac in 0.05f64..1.0) {
        let design = DoseDesign::new(vec![0.0, 1.0, 3.0, 10.0, 30.0]).unwrap();
        let dose = 30.0 * dose_frac;
        let Ok(theta0) = guesstimate_from_anchor(fam, dose, frac, &design) else {
            // anchors a monotone convex or concave shape cannot reach
            return Ok(());
        };
        let max = match fam {
            ModelFamily::Emax => 1.0,
            _ => dosekit::drmodels::max_standardized(fam, &theta0, 30.0),
        };
        let got = eval_standardized(fam, &theta0, dose);
        prop_assert!((got - frac * max).abs() <= 1e-8 * (frac * max).abs().max(1.0), "{fam}: {got} vs {}", frac * max);
    }

    #[test]
    fn contrast_is_normalized_and_affine_invariant((mu, s) in contrast_problem(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let c = optimal_contrast(&mu, &s).unwrap();
        prop_assert!(c.sum().abs() < 1e-12);
        prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        prop_assert!(c.dot(&mu) > 0.0);
        let shifted = mu.map(|m| a * m + b);
        let c2 = optimal_contrast(&shifted, &s).unwrap();
        prop_assert!((&c - &c2).amax() < 1e-12, "{}", (&c - &c2).amax());
        let flipped = mu.map(|m| -a * m + b);
        let c3 = optimal_contrast(&flipped, &s).unwrap();
        prop_assert!((&c + &c3).amax() < 1e-12);
    }

    #[test]
    fn no_random_contrast_beats_the_optimum((mu, s) in contrast_problem(), seeds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 50)) {
        let k = mu.len();
        let c = optimal_contrast(&mu, &s).unwrap();
        let best = noncentrality(&c, &mu, &s);
        for raw in seeds {
            let mut v = DVector::from_iterator(k, raw.into_iter().take(k));
            v.add_scalar_mut(-v.mean());
            if v.norm() < 1e-6 {
                continue;
            }
            prop_assert!(noncentrality(&v, &mu, &s) <= best + 1e-9);
        }
    }

    #[test]
    fn contrast_solves_the_generalized_eigenproblem((mu, s) in contrast_problem()) {
        let k = mu.len();
        let c0 = placebo_difference_matrix(k);
        let c = optimal_contrast(&mu, &s).unwrap();
        // c sums to zero, so c = C0' x with x the active entries
        let x = DVector::from_iterator(k - 1, c.iter().skip(1).copied());
        prop_assert!((c0.transpose() * &x - &c).amax() < 1e-12);
        let m = &c0 * &mu * mu.transpose() * c0.transpose();
        let n = &c0 * &s * c0.transpose();
        let lambda = x.dot(&(&m * &x)) / x.dot(&(&n * &x));
        let resid = &m * &x - &n * &x * lambda;
        prop_assert!(resid.amax() <= 1e-8 * (m.amax() + n.amax() * lambda.abs()), "residual {}", resid.amax());
    }

    #[test]
    fn placebo_adjusted_contrast_is_equivalent((mu, s) in contrast_problem()) {
        let k = mu.len();
        let c0 = placebo_difference_matrix(k);
        let mu_c = &c0 * &mu;
        prop_assume!(mu_c.amax() > 1e-3);
        let s_c = &c0 * &s * c0.transpose();
        let c = optimal_contrast(&mu, &s).unwrap();
        let d = optimal_contrast_placebo_adjusted(&mu_c, &s_c).unwrap();
        let full = noncentrality(&c, &mu, &s);
        let adjusted = noncentrality(&d, &mu_c, &s_c);
        prop_assert!((full - adjusted).abs() <= 1e-10 * full.abs().max(1.0), "{full} vs {adjusted}");
        let back = c0.transpose() * &d;
        let back = &back / back.norm();
        prop_assert!((&back - &c).amax() < 1e-8);
    }
}

/// `∫ φ(t) Π Φ((q − √ρ t)/√(1−ρ)) dt` for the equicorrelated case, by Simpson's rule.
fn equicorrelated_oracle(q: f64, rho: f64, m: usize) -> f64 {
    let n = 4000;
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / n as f64;
    let f = |t: f64| dnorm(t) * pnorm((q - rho.sqrt() * t) / (1.0 - rho).sqrt()).powi(m as i32);
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// `P(Z1 ≤ a, Z2 ≤ b)` with correlation `rho`, by Simpson's rule on the conditional form.
fn bivariate_oracle(a: f64, b: f64, rho: f64) -> f64 {
    bivariate_simpson(a, b, rho, 4000)
}

fn bivariate_simpson(a: f64, b: f64, rho: f64, n: usize) -> f64 {
    if a <= -9.0 {
        return 0.0;
    }
    let (lo, a) = (-9.0, a.min(9.0));
    let h = (a - lo) / n as f64;
    let f = |x: f64| dnorm(x) * pnorm((b - rho * x) / (1.0 - rho * rho).sqrt());
    let mut acc = f(lo) + f(a);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// `P(Z ≤ q)` in three dimensions: outer Simpson over `Z1`, conditional bivariate inside.
fn trivariate_oracle(q: [f64; 3], r: &DMatrix<f64>) -> f64 {
    let (r12, r13, r23) = (r[(0, 1)], r[(0, 2)], r[(1, 2)]);
    let (s2, s3) = ((1.0 - r12 * r12).sqrt(), (1.0 - r13 * r13).sqrt());
    let partial = (r23 - r12 * r13) / (s2 * s3);
    let n = 600;
    let lo = -9.0;
    let h = (q[0] - lo) / n as f64;
    let f = |x: f64| dnorm(x) * bivariate_simpson((q[1] - r12 * x) / s2, (q[2] - r13 * x) / s3, partial, 600);
    let mut acc = f(lo) + f(q[0]);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

fn random_correlation3() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, 9), 0.3f64..1.0).prop_map(|(a, ridge)| {
        let v = spd(3, &a, ridge);
        DMatrix::from_fn(3, 3, |i, j| v[(i, j)] / (v[(i, i)] * v[(j, j)]).sqrt())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mvn_matches_quadrature_trivariate(r in random_correlation3(), q in prop::array::uniform3(-1.5f64..2.5)) {
        let exact = trivariate_oracle(q, &r);
        let p = mvn_rect(&q, &CorrMatrix::new(r.clone()).unwrap(), &QmcConfig::default()).unwrap();
        prop_assert!((p.value - exact).abs() <= 5e-5, "{} vs {exact} for {r}", p.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mvn_matches_quadrature_for_equicorrelation(m in 2usize..=3, rho in 0.0f64..0.95, q in -1.0f64..3.0) {
        let r = CorrMatrix::equicorrelated(m, rho).unwrap();
        let p = mvn_equicoordinate(q, &r, &QmcConfig::default()).unwrap();
        let exact = equicorrelated_oracle(q, rho, m);
        prop_assert!((p.value - exact).abs() <= 5e-5, "M={m} rho={rho} q={q}: {} vs {exact}", p.value);
    }

    #[test]
    fn mvn_matches_quadrature_bivariate(rho in -0.95f64..0.95, a in -2.0f64..3.0, b in -2.0f64..3.0) {
        let r = CorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap();
        let p = mvn_rect(&[a, b], &r, &QmcConfig::default()).unwrap();
        let exact = bivariate_oracle(a, b, rho);
        prop_assert!((p.value - exact).abs() <= 5e-5, "{} vs {exact}", p.value);
    }

    #[test]
    fn mvn_is_monotone_in_the_limit(m in 2usize..=6, rho in 0.0f64..0.9, q in -1.0f64..3.0, dq in 0.001f64..0.5) {
        let r = CorrMatrix::equicorrelated(m, rho).unwrap();
        let cfg = QmcConfig::default();
        let lo = mvn_equicoordinate(q, &r, &cfg).unwrap().value;
        let hi = mvn_equicoordinate(q + dq, &r, &cfg).unwrap().value;
        prop_assert!(lo <= hi, "{lo} > {hi}");
    }

    #[test]
    fn adjusted_p_at_critical_value_is_alpha(m in 2usize..=5, rho in 0.0f64..0.9, alpha in 0.01f64..0.1) {
        let r = CorrMatrix::equicorrelated(m, rho).unwrap();
        let cfg = QmcConfig::default();
        let q = critical_value(&r, alpha, &cfg).unwrap().value;
        let p = adjusted_pvalues(&vec![q; m], &r, &cfg).unwrap()[0];
        prop_assert!((p - alpha).abs() < 2e-4, "p {p} alpha {alpha}");
    }
}

fn candidate_set() -> Vec<CandidateModel> {
    vec![
        CandidateModel::new(ModelFamily::Emax, vec![0.2]).unwrap(),
        CandidateModel::linear(),
        CandidateModel::new(ModelFamily::Quadratic, vec![-0.8]).unwrap(),
        CandidateModel::new(ModelFamily::Exponential, vec![0.4]).unwrap(),
    ]
}

fn random_estimate() -> impl Strategy<Value = AnovaEstimate> {
    (prop::collection::vec(-1.0f64..2.0, 5), prop::collection::vec(-0.3f64..0.3, 25), 0.02f64..0.3).prop_map(
        |(mu, a, ridge)| {
            let design = DoseDesign::new(vec![0.0, 0.1, 0.3, 0.6, 1.0]).unwrap();
            AnovaEstimate::new(design, DVector::from_vec(mu), spd(5, &a, ridge)).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn test_decisions_are_scale_invariant(est in random_estimate(), a in 0.2f64..5.0, b in -3.0f64..3.0) {
        let cfg = QmcConfig::default();
        let models = candidate_set();
        let base = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &cfg).unwrap();
        let scaled = AnovaEstimate::new(
            est.design().clone(),
            est.mu_hat().map(|m| a * m + b),
            est.cov() * (a * a),
        ).unwrap();
        let other = mct_test(&scaled, &models, 0.025, &ContrastSource::Observed, &cfg).unwrap();
        for m in 0..models.len() {
            prop_assert!((base.z[m] - other.z[m]).abs() < 1e-8);
            if (base.z[m] - base.critical).abs() > 1e-6 {
                prop_assert_eq!(base.significant[m], other.significant[m]);
            }
        }
        prop_assert!((base.critical - other.critical).abs() < 1e-6);
    }

    #[test]
    fn permuting_models_permutes_results(est in random_estimate()) {
        let cfg = QmcConfig::default();
        let models = candidate_set();
        let reversed: Vec<CandidateModel> = models.iter().rev().cloned().collect();
        let a = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &cfg).unwrap();
        let b = mct_test(&est, &reversed, 0.025, &ContrastSource::Observed, &cfg).unwrap();
        let m = models.len();
        for i in 0..m {
            let j = m - 1 - i;
            prop_assert!((a.z[i] - b.z[j]).abs() < 1e-12);
            prop_assert!((a.adjusted_p[i] - b.adjusted_p[j]).abs() < 1e-3);
            if (a.z[i] - a.critical).abs() > 1e-2 {
                prop_assert_eq!(a.significant[i], b.significant[j]);
            }
        }
        prop_assert!((a.critical - b.critical).abs() < 1e-3, "{} vs {}", a.critical, b.critical);
    }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Direct Nelder–Mead on `(θ0, θ1, shape)` with shapes mapped into their bounds.
fn direct_search(est: &AnovaEstimate, family: ModelFamily, bounds: &FitBounds, starts: &[Vec<f64>]) -> f64 {
    let (lo, hi) = bounds.ranges()[0];
    let (llo, lhi) = (lo.ln(), hi.ln());
    let map = |p: &[f64]| vec![p[0], p[1], (llo + (lhi - llo) * logistic(p[2])).exp()];
    let opts = NelderMeadOptions {
        max_evals: 20_000,
        ..NelderMeadOptions::default()
    };
    starts
        .iter()
        .map(|s| {
            let (_, v) = nelder_mead(|p| criterion_at(est, family, &map(p)).unwrap_or(f64::INFINITY), s, opts);
            v
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn profiled_fit_is_never_beaten_by_direct_search(
        fam in prop::sample::select(vec![ModelFamily::Emax, ModelFamily::Exponential]),
        est in random_estimate(),
        starts in prop::collection::vec((-2.0f64..2.0, -3.0f64..3.0, -4.0f64..4.0), 20),
    ) {
        let bounds = FitBounds::default_for(fam, est.design());
        let fit = gls_fit(&est, fam, &bounds).unwrap();
        let starts: Vec<Vec<f64>> = starts.into_iter().map(|(a, b, c)| vec![a, b, c]).collect();
        let direct = direct_search(&est, fam, &bounds, &starts);
        prop_assert!(fit.criterion <= direct + 1e-8, "profiled {} vs direct {direct}", fit.criterion);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn placebo_adjusted_fit_matches_full_fit(
        fam in prop::sample::select(vec![ModelFamily::Emax, ModelFamily::Exponential, ModelFamily::Linear]),
        e0 in -2.0f64..2.0, e1 in 0.5f64..3.0, shape in 0.2f64..0.8,
        a in prop::collection::vec(-0.3f64..0.3, 36), ridge in 0.02f64..0.3,
    ) {
        let doses = vec![0.0, 0.05, 0.2, 0.5, 0.8, 1.0];
        let mut theta = vec![e0, e1];
        if fam != ModelFamily::Linear {
            theta.push(shape);
        }
        let mu = DVector::from_iterator(6, doses.iter().map(|&x| eval_full(fam, &theta, x)));
        let est = AnovaEstimate::new(DoseDesign::new(doses.clone()).unwrap(), mu, spd(6, &a, ridge)).unwrap();
        let adj = est.to_placebo_differences().unwrap();
        let full = gls_fit(&est, fam, &FitBounds::default_for(fam, est.design())).unwrap();
        let eff = gls_fit(&adj, fam, &FitBounds::default_for(fam, adj.design())).unwrap();
        prop_assert!(eff.placebo_adjusted);
        for &x in &doses {
            let f_full = eval_full(fam, full.theta.as_slice(), x) - eval_full(fam, full.theta.as_slice(), 0.0);
            let f_eff = eval_full(fam, eff.theta.as_slice(), x);
            prop_assert!((f_full - f_eff).abs() < 1e-6, "x={x}: {f_full} vs {f_eff}");
        }
    }

    #[test]
    fn gaic_order_follows_criterion_for_equal_dimensions(est in random_estimate()) {
        let fits: Vec<_> = [ModelFamily::Emax, ModelFamily::Exponential, ModelFamily::Quadratic]
            .into_iter()
            .map(|f| gls_fit(&est, f, &FitBounds::default_for(f, est.design())).unwrap())
            .collect();
        for i in 0..fits.len() {
            for j in 0..fits.len() {
                prop_assert_eq!(fits[i].gaic < fits[j].gaic, fits[i].criterion < fits[j].criterion);
            }
        }
    }
}

/// Saturated binomial GLM by Newton–Raphson on the indicator design.
fn newton_glm(rows: &[BinomialCount]) -> (DVector<f64>, DMatrix<f64>) {
    let k = rows.len();
    let x = DMatrix::<f64>::identity(k, k);
    let y = DVector::from_iterator(k, rows.iter().map(|r| r.successes as f64));
    let n = DVector::from_iterator(k, rows.iter().map(|r| r.trials as f64));
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let p = (&x * &beta).map(logistic);
        let score = x.transpose() * (&y - n.component_mul(&p));
        let w = DMatrix::from_diagonal(&n.component_mul(&p.map(|v| v * (1.0 - v))));
        let info = x.transpose() * w * &x;
        let step = info.clone().cholesky().unwrap().solve(&score);
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    let p = (&x * &beta).map(logistic);
    let w = DMatrix::from_diagonal(&n.component_mul(&p.map(|v| v * (1.0 - v))));
    let info = x.transpose() * w * &x;
    (beta, info.try_inverse().unwrap())
}

/// Breslow partial log-likelihood written out directly over the risk sets.
fn breslow_loglik(rows: &[SurvivalRecord], doses: &[f64], beta: &[f64]) -> f64 {
    let eta = |d: f64| {
        let g = doses.iter().position(|&x| x == d).unwrap();
        if g == 0 { 0.0 } else { beta[g - 1] }
    };
    let mut times: Vec<f64> = rows.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&t| {
            let events: Vec<&SurvivalRecord> = rows.iter().filter(|r| r.event && r.time == t).collect();
            let risk: f64 = rows.iter().filter(|r| r.time >= t).map(|r| eta(r.dose).exp()).sum();
            events.iter().map(|r| eta(r.dose)).sum::<f64>() - events.len() as f64 * risk.ln()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logistic_closed_form_equals_newton_glm(counts in prop::collection::vec((1u64..40, 2u64..80), 2..7)) {
        let rows: Vec<BinomialCount> = counts
            .iter()
            .enumerate()
            .map(|(i, &(s, extra))| BinomialCount { dose: i as f64, successes: s, trials: s + extra })
            .collect();
        let est = logistic_saturated(&rows, false).unwrap();
        let (beta, cov) = newton_glm(&rows);
        prop_assert!((est.mu_hat() - &beta).amax() < 1e-10);
        prop_assert!((est.cov() - &cov).amax() < 1e-10);
    }

    #[test]
    fn cox_newton_ascends_to_the_maximum(
        groups in prop::collection::vec(prop::collection::vec((0.05f64..5.0, prop::bool::weighted(0.7)), 8..25), 2..5),
        bump in prop::collection::vec(-0.3f64..0.3, 4),
    ) {
        let mut rows = Vec::new();
        for (g, recs) in groups.iter().enumerate() {
            for (i, &(time, event)) in recs.iter().enumerate() {
                // the first record of every group is an event so no group is separated
                rows.push(SurvivalRecord { dose: g as f64, time, event: event || i == 0 });
            }
        }
        let (doses, fit) = coxph_fit(&rows).unwrap();
        prop_assert!(fit.gradient_norm <= 1e-8);
        prop_assert!(fit.loglik_path.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs()));
        let direct = breslow_loglik(&rows, &doses, &fit.log_hr);
        prop_assert!((direct - fit.loglik).abs() < 1e-8 * direct.abs().max(1.0));
        let nudged: Vec<f64> = fit.log_hr.iter().zip(&bump).map(|(b, d)| b + d).collect();
        prop_assert!(breslow_loglik(&rows, &doses, &nudged) <= fit.loglik + 1e-9);
    }
}
