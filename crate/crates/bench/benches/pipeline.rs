use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dosekit::firststage::negbin_fit_groups;
use dosekit::glsfit::{bootstrap, gls_fit, BootstrapConfig};
use dosekit::mcptest::{mct_test, ContrastSource};
use dosekit::mvnorm::{critical_value, CorrMatrix};
use dosekit::{FitBounds, ModelFamily, QmcConfig};
use dosekit_bench::{neurodeg_candidates, neurodeg_estimate};

fn mvn(c: &mut Criterion) {
    let cfg = QmcConfig::default();
    let r = CorrMatrix::equicorrelated(4, 0.5).unwrap();
    c.bench_function("critical_value_equicorrelated_4", |b| {
        b.iter(|| critical_value(black_box(&r), 0.025, &cfg).unwrap())
    });
    let est = neurodeg_estimate();
    let models = neurodeg_candidates();
    c.bench_function("mct_test_neurodeg", |b| {
        b.iter(|| mct_test(black_box(&est), &models, 0.025, &ContrastSource::Observed, &cfg).unwrap())
    });
}

fn fitting(c: &mut Criterion) {
    let est = neurodeg_estimate();
    for family in [ModelFamily::Emax, ModelFamily::SigEmax, ModelFamily::Exponential] {
        let bounds = FitBounds::default_for(family, est.design());
        c.bench_function(&format!("gls_fit_{}", family.name()), |b| {
            b.iter(|| gls_fit(black_box(&est), family, &bounds).unwrap())
        });
    }
    let bounds = FitBounds::default_for(ModelFamily::Emax, est.design());
    let cfg = BootstrapConfig::new(500, 1);
    c.bench_function("bootstrap_emax_500", |b| {
        b.iter(|| bootstrap(black_box(&est), ModelFamily::Emax, &bounds, &cfg).unwrap())
    });
}

fn first_stage(c: &mut Criterion) {
    let groups: Vec<Vec<u64>> = (0..6)
        .map(|g| (0..100).map(|i| ((i * 7 + g * 3) % 11) as u64).collect())
        .collect();
    c.bench_function("negbin_six_groups_n100", |b| {
        b.iter(|| negbin_fit_groups(black_box(&groups)).unwrap())
    });
}

criterion_group!(benches, mvn, fitting, first_stage);
criterion_main!(benches);
