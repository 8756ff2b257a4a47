//! Operating-characteristics simulations for the two-stage GLS fit.
//!
//! Each replicate draws subject-level data from a known dose-response truth,
//! runs the matching first stage, fits the truth's family by GLS and records
//! the estimation error and whether 90% Wald (GLS) and parametric bootstrap
//! (GLS-B) intervals cover the true parameters.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drmodels::{eval_full, DoseDesign, ModelFamily};
use crate::error::{Error, Result};
use crate::firststage::{
    anova_normal, coxph_factor, logistic_saturated, negbin_saturated, BinomialCount, Observation,
    SubjectData, SurvivalRecord,
};
use crate::glsfit::{bootstrap, gls_fit, theta_covariance, BootstrapConfig, FitBounds, FittedModel};
use crate::mcptest::{AnovaEstimate, SCHEMA};
use crate::numeric::{pnorm, qnorm};

pub const SIM_DOSES: [f64; 6] = [0.0, 0.05, 0.2, 0.5, 0.8, 1.0];
/// Per-arm sample sizes of the full study grid.
pub const FULL_SAMPLE_SIZES: [usize; 6] = [15, 30, 50, 100, 300, 1000];
pub const CENSOR_TIME: f64 = 10.0;
pub const NB_DISPERSION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Normal,
    Binary,
    Count,
    Tte,
}

impl Endpoint {
    pub fn name(self) -> &'static str {
        match self {
            Endpoint::Normal => "normal",
            Endpoint::Binary => "binary",
            Endpoint::Count => "count",
            Endpoint::Tte => "tte",
        }
    }

    pub const ALL: [Endpoint; 4] = [Endpoint::Binary, Endpoint::Count, Endpoint::Tte, Endpoint::Normal];
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Endpoint::Normal),
            "binary" => Ok(Endpoint::Binary),
            "count" => Ok(Endpoint::Count),
            "tte" | "time-to-event" => Ok(Endpoint::Tte),
            other => Err(Error::InvalidParameter(format!("unknown endpoint '{other}'"))),
        }
    }
}

/// Truth in its tabulated form `(θ0, θ1, θ2)`; quadratic rows are polynomial coefficients.
pub fn table1_truth(endpoint: Endpoint, family: ModelFamily) -> Result<[f64; 3]> {
    use Endpoint::*;
    use ModelFamily::*;
    let row = match (endpoint, family) {
        (Binary, Quadratic) => [-1.734, 4.335, -2.7094],
        (Binary, Emax) => [-1.734, 1.8207, 0.05],
        (Binary, Exponential) => [-1.734, 0.01176, 0.2],
        (Count, Quadratic) => [2.0, -2.0, 1.25],
        (Count, Emax) => [2.0, -0.84, 0.05],
        (Count, Exponential) => [2.0, -0.005427, 0.2],
        (Tte, Quadratic) => [0.0, -1.8876, 1.1797],
        (Tte, Emax) => [0.0, -0.7928, 0.05],
        (Tte, Exponential) => [0.0, -0.005122, 0.2],
        // the quadratic coefficient is negative like every other quadratic row (θ2/θ1 = -5/8)
        (Normal, Quadratic) => [0.0, 2.61, -1.633],
        (Normal, Emax) => [0.0, 1.097, 0.05],
        (Normal, Exponential) => [0.0, 0.007089, 0.2],
        _ => {
            return Err(Error::InvalidParameter(format!(
                "no preset truth for {} data with the {family} family",
                endpoint.name()
            )))
        }
    };
    Ok(row)
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub name: String,
    pub endpoint: Endpoint,
    pub family: ModelFamily,
    /// Truth in the tabulated parameterization (polynomial coefficients for the quadratic).
    pub truth: Vec<f64>,
    pub doses: Vec<f64>,
    pub n_per_arm: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl SimScenario {
    /// Preset named `table1-{endpoint}-{family}`.
    pub fn preset(name: &str, n_per_arm: usize, replicates: usize, seed: u64) -> Result<Self> {
        let parts: Vec<&str> = name.split('-').collect();
        let (endpoint, family) = match parts.as_slice() {
            ["table1", e, f] => (e.parse::<Endpoint>()?, f.parse::<ModelFamily>()?),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "scenario must look like table1-<endpoint>-<family>, got '{name}'"
                )))
            }
        };
        let truth = table1_truth(endpoint, family)?;
        Ok(Self {
            name: format!("table1-{}-{}", endpoint.name(), family.name()),
            endpoint,
            family,
            truth: truth.to_vec(),
            doses: SIM_DOSES.to_vec(),
            n_per_arm,
            replicates,
            seed,
        })
    }

    /// All twelve preset names.
    pub fn preset_names() -> Vec<String> {
        let mut names = Vec::new();
        for e in Endpoint::ALL {
            for f in [ModelFamily::Quadratic, ModelFamily::Emax, ModelFamily::Exponential] {
                names.push(format!("table1-{}-{}", e.name(), f.name()));
            }
        }
        names
    }

    /// `f(x, θ)` of the truth on its own scale.
    pub fn truth_at(&self, x: f64) -> f64 {
        truth_value(self.family, &self.truth, x)
    }

    fn validate(&self) -> Result<()> {
        if self.n_per_arm < 2 {
            return Err(Error::InvalidParameter("need at least 2 subjects per arm".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("need at least one replicate".into()));
        }
        if self.truth.len() != self.family.full_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} truth needs {} parameters",
                self.family,
                self.family.full_dim()
            )));
        }
        DoseDesign::new(self.doses.clone()).map(|_| ())
    }
}

fn truth_value(family: ModelFamily, truth: &[f64], x: f64) -> f64 {
    match family {
        ModelFamily::Quadratic => truth[0] + truth[1] * x + truth[2] * x * x,
        _ => eval_full(family, truth, x),
    }
}

/// FNV-1a, used to give every scenario its own random streams.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Random stream for one replicate of a scenario.
pub fn replicate_rng(scenario: &SimScenario, replicate: usize) -> ChaCha8Rng {
    let key = scenario.seed
        ^ name_hash(&scenario.name).rotate_left(17)
        ^ (scenario.n_per_arm as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(replicate as u64);
    rng
}

fn draw_arm<R: Rng + ?Sized>(endpoint: Endpoint, mean: f64, dose: f64, n: usize, rng: &mut R, data: &mut SubjectData) {
    match (endpoint, data) {
        (Endpoint::Normal, SubjectData::Normal(rows)) => {
            let dist = Normal::new(mean, 1.0).expect("unit variance");
            rows.extend((0..n).map(|_| Observation {
                dose,
                resp: dist.sample(rng),
            }));
        }
        (Endpoint::Binary, SubjectData::Binary(rows)) => {
            let p = 1.0 / (1.0 + (-mean).exp());
            let successes = Binomial::new(n as u64, p).expect("probability in [0, 1]").sample(rng);
            rows.push(BinomialCount {
                dose,
                successes,
                trials: n as u64,
            });
        }
        (Endpoint::Count, SubjectData::Count(rows)) => {
            let m = mean.exp();
            let gamma = Gamma::new(NB_DISPERSION, m / NB_DISPERSION).expect("positive mean");
            rows.extend((0..n).map(|_| {
                let lambda: f64 = gamma.sample(rng);
                let y = if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0)
                } else {
                    0.0
                };
                Observation { dose, resp: y }
            }));
        }
        (Endpoint::Tte, SubjectData::TimeToEvent(rows)) => {
            let rate = (-mean).exp();
            let exp = Exp::new(rate).expect("positive rate");
            rows.extend((0..n).map(|_| {
                let t: f64 = exp.sample(rng);
                SurvivalRecord {
                    dose,
                    time: t.min(CENSOR_TIME),
                    event: t <= CENSOR_TIME,
                }
            }));
        }
        _ => unreachable!("data container matches the endpoint"),
    }
}

fn empty_data(endpoint: Endpoint) -> SubjectData {
    match endpoint {
        Endpoint::Normal => SubjectData::Normal(Vec::new()),
        Endpoint::Binary => SubjectData::Binary(Vec::new()),
        Endpoint::Count => SubjectData::Count(Vec::new()),
        Endpoint::Tte => SubjectData::TimeToEvent(Vec::new()),
    }
}

/// Subject-level data for one replicate, deterministic in `(seed, scenario, replicate)`.
///
/// Normal responses have unit variance, binary responses are Bernoulli on
/// the logit scale, counts are negative binomial with log mean `f` and
/// dispersion 1, and event times are exponential with log mean `f`,
/// censored at time 10.
pub fn generate(scenario: &SimScenario, replicate: usize) -> SubjectData {
    let mut rng = replicate_rng(scenario, replicate);
    generate_with(scenario, &scenario.doses, &mut rng)
}

fn generate_with<R: Rng + ?Sized>(scenario: &SimScenario, doses: &[f64], rng: &mut R) -> SubjectData {
    let mut data = empty_data(scenario.endpoint);
    for &d in doses {
        draw_arm(scenario.endpoint, scenario.truth_at(d), d, scenario.n_per_arm, rng, &mut data);
    }
    data
}

/// First stage for an endpoint. Binary groups at 0% or 100% get the continuity
/// correction, and Cox log hazard ratios are negated onto the log-mean scale.
pub fn first_stage(data: &SubjectData) -> Result<AnovaEstimate> {
    match data {
        SubjectData::Normal(rows) => anova_normal(rows),
        SubjectData::Binary(rows) => logistic_saturated(rows, true),
        SubjectData::Count(rows) => negbin_saturated(rows),
        SubjectData::TimeToEvent(rows) => Ok(coxph_factor(rows)?.negated()),
    }
}

/// Shape bounds used in the simulations: ED50 in `[0.001, 5]`, exponential `δ` in `[0.05, 5]`.
pub fn simulation_bounds(family: ModelFamily) -> Result<FitBounds> {
    match family {
        ModelFamily::Emax => FitBounds::new(family, vec![(0.001, 5.0)]),
        ModelFamily::Exponential => FitBounds::new(family, vec![(0.05, 5.0)]),
        ModelFamily::SigEmax => FitBounds::new(family, vec![(0.001, 5.0), (0.25, 10.0)]),
        f => FitBounds::new(f, vec![]),
    }
}

/// Root mean squared error of a fitted curve against the truth over the design doses.
pub fn rmse_dose_response(fit: &FittedModel, scenario: &SimScenario) -> f64 {
    rmse_curves(
        |x| crate::glsfit::DosePredictor::predict(fit, x),
        |x| scenario.truth_at(x),
        &scenario.doses,
        fit.placebo_adjusted,
    )
}

/// RMSE between two curves at `doses`; with `effects` both are taken relative to dose 0.
pub fn rmse_curves<F, G>(fitted: F, truth: G, doses: &[f64], effects: bool) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (f0, t0) = if effects { (fitted(0.0), truth(0.0)) } else { (0.0, 0.0) };
    let ss: f64 = doses
        .iter()
        .map(|&x| ((fitted(x) - f0) - (truth(x) - t0)).powi(2))
        .sum();
    (ss / doses.len() as f64).sqrt()
}

/// Parameters in the reported parameterization: polynomial coefficients for the quadratic.
fn reported(family: ModelFamily, theta: &[f64]) -> Vec<f64> {
    match family {
        ModelFamily::Quadratic => vec![theta[0], theta[1], theta[1] * theta[2]],
        _ => theta.to_vec(),
    }
}

/// Jacobian of [`reported`] with respect to the free parameters.
fn reported_jacobian(family: ModelFamily, theta: &[f64], placebo_adjusted: bool) -> DMatrix<f64> {
    let p = family.full_dim();
    let mut j = DMatrix::identity(p, p);
    if family == ModelFamily::Quadratic {
        j[(2, 1)] = theta[2];
        j[(2, 2)] = theta[1];
    }
    if placebo_adjusted {
        j.view((1, 1), (p - 1, p - 1)).clone_owned()
    } else {
        j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Bootstrap draws per replicate for GLS-B; 0 disables the bootstrap arm.
    pub boot_draws: usize,
    /// Two-sided confidence level of the intervals.
    pub level: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            boot_draws: 500,
            level: 0.9,
        }
    }
}

/// Coverage tallies for one interval method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Replicates that produced an interval.
    pub evaluated: usize,
    /// Replicates without an interval (counted as not covering).
    pub unavailable: usize,
    /// Fraction covering each free parameter.
    pub per_parameter: Vec<f64>,
    /// Average of the per-parameter coverages.
    pub mean: f64,
    /// Fraction covering all free parameters at once.
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failures {
    pub first_stage: usize,
    pub fit: usize,
}

/// Aggregated results for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: String,
    pub scenario: SimScenario,
    pub parameters: Vec<String>,
    pub boot_draws: usize,
    pub level: f64,
    /// Replicates that produced a fit.
    pub completed: usize,
    pub failures: Failures,
    pub rmse_mean: f64,
    pub gls: Coverage,
    pub gls_boot: Option<Coverage>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

enum Outcome {
    FirstStageFailed,
    FitFailed,
    Done {
        rmse: f64,
        wald: Option<Vec<bool>>,
        boot: Option<Vec<bool>>,
    },
}

fn covers(intervals: &[(f64, f64)], truth: &[f64]) -> Vec<bool> {
    intervals
        .iter()
        .zip(truth)
        .map(|(&(lo, hi), &t)| lo <= t && t <= hi)
        .collect()
}

fn run_replicate(scenario: &SimScenario, cfg: &StudyConfig, replicate: usize) -> Outcome {
    let mut rng = replicate_rng(scenario, replicate);
    let data = generate_with(scenario, &scenario.doses, &mut rng);
    let boot_seed = rng.next_u64();
    let Ok(est) = first_stage(&data) else {
        return Outcome::FirstStageFailed;
    };
    let family = scenario.family;
    let bounds = simulation_bounds(family).expect("preset bounds are valid");
    let Ok(fit) = gls_fit(&est, family, &bounds) else {
        return Outcome::FitFailed;
    };
    let rmse = rmse_dose_response(&fit, scenario);
    let skip = usize::from(fit.placebo_adjusted);
    let truth = &scenario.truth[skip..];
    let z = qnorm(0.5 + cfg.level / 2.0);

    // Wald intervals from the asymptotic covariance, also when a shape parameter is on a bound
    let wald = theta_covariance(&fit, &est).ok().map(|cov| {
        let jac = reported_jacobian(family, fit.theta.as_slice(), fit.placebo_adjusted);
        let cov = &jac * cov * jac.transpose();
        let est_rep = reported(family, fit.theta.as_slice());
        let intervals: Vec<(f64, f64)> = est_rep[skip..]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let se = cov[(i, i)].max(0.0).sqrt();
                (v - z * se, v + z * se)
            })
            .collect();
        covers(&intervals, truth)
    });

    let boot = (cfg.boot_draws > 0)
        .then(|| {
            let bc = BootstrapConfig {
                draws: cfg.boot_draws,
                seed: boot_seed,
                quantiles: (0.5 - cfg.level / 2.0, 0.5 + cfg.level / 2.0),
                doses: Vec::new(),
            };
            bootstrap(&est, family, &bounds, &bc).ok().map(|b| {
                let dim = truth.len();
                let intervals: Vec<(f64, f64)> = (0..dim)
                    .map(|i| {
                        let mut v: Vec<f64> = b
                            .samples
                            .iter()
                            .map(|t| reported(family, t)[skip + i])
                            .collect();
                        v.sort_by(f64::total_cmp);
                        (
                            crate::numeric::quantile_sorted(&v, bc.quantiles.0),
                            crate::numeric::quantile_sorted(&v, bc.quantiles.1),
                        )
                    })
                    .collect();
                covers(&intervals, truth)
            })
        })
        .flatten();
    Outcome::Done { rmse, wald, boot }
}

fn tally(hits: &[Option<Vec<bool>>], dim: usize) -> Coverage {
    let total = hits.len();
    let evaluated = hits.iter().filter(|h| h.is_some()).count();
    let mut per = vec![0usize; dim];
    let mut joint = 0usize;
    for h in hits.iter().flatten() {
        for (i, &c) in h.iter().enumerate() {
            per[i] += usize::from(c);
        }
        joint += usize::from(h.iter().all(|&c| c));
    }
    let denom = total.max(1) as f64;
    let per_parameter: Vec<f64> = per.iter().map(|&c| c as f64 / denom).collect();
    Coverage {
        evaluated,
        unavailable: total - evaluated,
        mean: per_parameter.iter().sum::<f64>() / dim.max(1) as f64,
        per_parameter,
        joint: joint as f64 / denom,
    }
}

/// Run every replicate of a scenario and aggregate RMSE and interval coverage.
pub fn run_scenario(scenario: &SimScenario, cfg: &StudyConfig) -> Result<SimReport> {
    scenario.validate()?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {}", cfg.level)));
    }
    if cfg.boot_draws > 0 && cfg.boot_draws < 100 {
        return Err(Error::InvalidParameter("bootstrap needs at least 100 draws".into()));
    }
    let outcomes: Vec<Outcome> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, cfg, r))
        .collect();

    let placebo_adjusted = scenario.endpoint == Endpoint::Tte;
    let skip = usize::from(placebo_adjusted);
    let names = match scenario.family {
        ModelFamily::Quadratic => vec!["b0", "b1", "b2"],
        f => f.parameter_names().to_vec(),
    };
    let parameters: Vec<String> = names[skip..].iter().map(|s| s.to_string()).collect();
    let dim = parameters.len();

    let mut failures = Failures {
        first_stage: 0,
        fit: 0,
    };
    let mut rmse = Vec::new();
    let mut wald = Vec::new();
    let mut boot = Vec::new();
    for o in outcomes {
        match o {
            Outcome::FirstStageFailed => failures.first_stage += 1,
            Outcome::FitFailed => failures.fit += 1,
            Outcome::Done { rmse: e, wald: w, boot: b } => {
                rmse.push(e);
                wald.push(w);
                boot.push(b);
            }
        }
    }
    let completed = rmse.len();
    Ok(SimReport {
        schema: SCHEMA.to_string(),
        scenario: scenario.clone(),
        parameters,
        boot_draws: cfg.boot_draws,
        level: cfg.level,
        completed,
        failures,
        rmse_mean: if completed > 0 {
            rmse.iter().sum::<f64>() / completed as f64
        } else {
            f64::NAN
        },
        gls: tally(&wald, dim),
        gls_boot: (cfg.boot_draws > 0).then(|| tally(&boot, dim)),
    })
}

/// Run several scenarios in order.
pub fn run_study(scenarios: &[SimScenario], cfg: &StudyConfig) -> Result<Vec<SimReport>> {
    scenarios.iter().map(|s| run_scenario(s, cfg)).collect()
}

/// Dose with the largest absolute effect over placebo among the active design doses.
pub fn max_effect_dose(scenario: &SimScenario) -> f64 {
    let base = scenario.truth_at(0.0);
    scenario.doses[1..]
        .iter()
        .copied()
        .fold((0.0, -1.0), |(bd, be), d| {
            let e = (scenario.truth_at(d) - base).abs();
            if e > be {
                (d, e)
            } else {
                (bd, be)
            }
        })
        .0
}

/// Simulated power of the one-sided level-`alpha` Wald test comparing the
/// max-effect dose with placebo, in the direction of the true effect.
pub fn simulated_power(scenario: &SimScenario, alpha: f64) -> Result<f64> {
    scenario.validate()?;
    let dose = max_effect_dose(scenario);
    let sign = (scenario.truth_at(dose) - scenario.truth_at(0.0)).signum();
    let crit = qnorm(1.0 - alpha);
    let doses = [0.0, dose];
    let rejections: Vec<Option<bool>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(scenario, r);
            let data = generate_with(scenario, &doses, &mut rng);
            let est = first_stage(&data).ok()?;
            let (diff, var) = if est.is_placebo_adjusted() {
                (est.mu_hat()[0], est.cov()[(0, 0)])
            } else {
                let c = est.cov();
                (
                    est.mu_hat()[1] - est.mu_hat()[0],
                    c[(0, 0)] + c[(1, 1)] - 2.0 * c[(0, 1)],
                )
            };
            Some(sign * diff / var.sqrt() > crit)
        })
        .collect();
    let done: Vec<bool> = rejections.into_iter().flatten().collect();
    if done.is_empty() {
        return Err(Error::NonConvergence("no replicate produced a test".into()));
    }
    Ok(done.iter().filter(|&&r| r).count() as f64 / done.len() as f64)
}

/// Large-sample power of the same test, for comparison with [`simulated_power`].
pub fn asymptotic_power(scenario: &SimScenario, alpha: f64) -> f64 {
    let dose = max_effect_dose(scenario);
    let (m0, m1) = (scenario.truth_at(0.0), scenario.truth_at(dose));
    let n = scenario.n_per_arm as f64;
    let var_one = |m: f64| -> f64 {
        match scenario.endpoint {
            Endpoint::Normal => 1.0 / n,
            Endpoint::Binary => {
                let p = 1.0 / (1.0 + (-m).exp());
                1.0 / (n * p * (1.0 - p))
            }
            Endpoint::Count => {
                let mu = m.exp();
                1.0 / (n * mu) + 1.0 / (n * NB_DISPERSION)
            }
            // expected events under censoring at CENSOR_TIME
            Endpoint::Tte => 1.0 / (n * (1.0 - (-CENSOR_TIME * (-m).exp()).exp())),
        }
    };
    let se = (var_one(m0) + var_one(m1)).sqrt();
    pnorm((m1 - m0).abs() / se - qnorm(1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let s = SimScenario::preset("table1-count-emax", 100, 10, 7).unwrap();
        assert_eq!(s.truth, vec![2.0, -0.84, 0.05]);
        assert_eq!(s.endpoint, Endpoint::Count);
        assert!(SimScenario::preset("table1-count-linear", 100, 10, 7).is_err());
        assert!(SimScenario::preset("count-emax", 100, 10, 7).is_err());
        assert_eq!(SimScenario::preset_names().len(), 12);
    }

    #[test]
    fn quadratic_rows_share_the_vertex() {
        for e in Endpoint::ALL {
            let t = table1_truth(e, ModelFamily::Quadratic).unwrap();
            assert!((t[2] / t[1] + 0.625).abs() < 1e-3, "{e:?} {t:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SimScenario::preset("table1-tte-emax", 20, 3, 11).unwrap();
        assert_eq!(generate(&s, 1), generate(&s, 1));
        assert_ne!(generate(&s, 1), generate(&s, 2));
    }

    #[test]
    fn normal_group_means_near_truth() {
        let s = SimScenario::preset("table1-normal-emax", 1000, 1, 5).unwrap();
        let SubjectData::Normal(rows) = generate(&s, 0) else {
            panic!("normal data expected")
        };
        for &d in &SIM_DOSES {
            let v: Vec<f64> = rows.iter().filter(|o| o.dose == d).map(|o| o.resp).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            assert!((m - s.truth_at(d)).abs() < 3.0 / (1000f64).sqrt());
        }
    }

    #[test]
    fn rmse_trivial_cases() {
        let doses = SIM_DOSES;
        assert_eq!(rmse_curves(|x| x, |x| x, &doses, false), 0.0);
        let r = rmse_curves(|x| x + 0.3, |x| x, &doses, false);
        assert!((r - 0.3).abs() < 1e-12);
        assert!(rmse_curves(|x| x + 0.3, |x| x, &doses, true) < 1e-12);
    }

    #[test]
    fn max_effect_dose_of_quadratic_is_vertex() {
        let s = SimScenario::preset("table1-count-quadratic", 30, 1, 1).unwrap();
        assert_eq!(max_effect_dose(&s), 0.8);
        let s = SimScenario::preset("table1-count-emax", 30, 1, 1).unwrap();
        assert_eq!(max_effect_dose(&s), 1.0);
    }

    #[test]
    fn small_study_runs_and_is_reproducible() {
        let s = SimScenario::preset("table1-count-emax", 30, 12, 3).unwrap();
        let cfg = StudyConfig {
            boot_draws: 100,
            level: 0.9,
        };
        let a = run_scenario(&s, &cfg).unwrap();
        let b = run_scenario(&s, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.completed + a.failures.first_stage + a.failures.fit, 12);
        assert!(a.gls.per_parameter.iter().all(|c| (0.0..=1.0).contains(c)));
        let tte = SimScenario::preset("table1-tte-quadratic", 30, 6, 3).unwrap();
        let r = run_scenario(&tte, &cfg).unwrap();
        assert_eq!(r.parameters, vec!["b1", "b2"]);
    }
}
