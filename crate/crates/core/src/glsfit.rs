//! The Mod step: two-stage generalized least squares dose-response fitting.
//!
//! A dose-response model is fitted to first-stage estimates by minimizing
//! `Ψ(θ) = (μ̂ - f(x, θ))' Ŝ⁻¹ (μ̂ - f(x, θ))`. Every supported family is
//! partially linear, `f = θ0 + θ1 f⁰(x, θ⁰)`, so the intercept and scale are
//! profiled out in closed form and only the shape parameters are searched:
//! a log-spaced grid followed by Brent (one shape parameter) or Nelder–Mead
//! (two). The quadratic family is linear in its polynomial coefficients and
//! is solved directly.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drmodels::{
    eval_full, eval_standardized, gradient_full, quadratic_from_polynomial, DoseDesign,
    FullParams, ModelFamily,
};
use crate::error::{Error, Result};
use crate::linalg::{check_spd, cholesky};
use crate::mcptest::AnovaEstimate;
use crate::numeric::{brent_minimize, log_grid, nelder_mead, qnorm, quantile_sorted, NelderMeadOptions};

/// Grid points per shape dimension in the profiled search.
pub const GRID_POINTS: usize = 50;

/// Relative distance (on the log scale) at which a shape parameter counts as on its bound.
const BOUND_TOL: f64 = 1e-4;

/// Closed search interval for each shape parameter of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    ranges: Vec<(f64, f64)>,
}

impl FitBounds {
    pub fn new(family: ModelFamily, ranges: Vec<(f64, f64)>) -> Result<Self> {
        let expected = match family {
            ModelFamily::Linear | ModelFamily::Quadratic => 0,
            f => f.nonlinear_count(),
        };
        if ranges.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{family} needs {expected} bound interval(s), got {}",
                ranges.len()
            )));
        }
        for &(lo, hi) in &ranges {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "bounds must satisfy 0 < lower < upper < inf, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { ranges })
    }

    /// Bounds scaled to the design's top dose.
    ///
    /// ED50 in `[1e-3, 1.5]·xK`, exponential `δ` in `[0.05, 5]·xK` and the
    /// Hill coefficient in `[0.25, 10]`. Linear and quadratic fits need none.
    pub fn default_for(family: ModelFamily, design: &DoseDesign) -> Self {
        let xk = design.max_dose();
        let ranges = match family {
            ModelFamily::Linear | ModelFamily::Quadratic => vec![],
            ModelFamily::Emax => vec![(1e-3 * xk, 1.5 * xk)],
            ModelFamily::SigEmax => vec![(1e-3 * xk, 1.5 * xk), (0.25, 10.0)],
            ModelFamily::Exponential => vec![(0.05 * xk, 5.0 * xk)],
        };
        Self { ranges }
    }

    /// Override the first shape parameter's interval (ED50 or `δ`).
    pub fn with_primary(mut self, lo: f64, hi: f64) -> Result<Self> {
        if self.ranges.is_empty() {
            return Err(Error::InvalidParameter("family has no bounded shape parameter".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bounds must satisfy 0 < lower < upper < inf, got [{lo}, {hi}]"
            )));
        }
        self.ranges[0] = (lo, hi);
        Ok(self)
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }
}

/// A GLS dose-response fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub family: ModelFamily,
    pub label: String,
    /// `(θ0, θ1, θ⁰…)`; `θ0` is fixed at 0 for placebo-adjusted fits.
    pub theta: FullParams,
    /// `Ψ(θ̂)`.
    pub criterion: f64,
    /// Asymptotic covariance of the free parameters; `None` when a shape
    /// parameter sits on a bound or the information matrix is singular.
    pub theta_cov: Option<DMatrix<f64>>,
    pub gaic: f64,
    pub placebo_adjusted: bool,
    pub at_bound: Vec<bool>,
    pub design: DoseDesign,
}

impl FittedModel {
    /// Number of estimated parameters (the intercept is not free when placebo-adjusted).
    pub fn dim(&self) -> usize {
        self.family.full_dim() - usize::from(self.placebo_adjusted)
    }

    /// Free parameter values in the order used by `theta_cov`.
    pub fn free_params(&self) -> &[f64] {
        &self.theta.as_slice()[usize::from(self.placebo_adjusted)..]
    }

    pub fn free_param_names(&self) -> Vec<&'static str> {
        self.family.parameter_names()[usize::from(self.placebo_adjusted)..].to_vec()
    }

    pub fn any_at_bound(&self) -> bool {
        self.at_bound.iter().any(|&b| b)
    }

    /// Gradient of `f(x, θ̂)` with respect to the free parameters.
    pub fn gradient(&self, x: f64) -> Vec<f64> {
        let mut g = gradient_full(self.family, self.theta.as_slice(), x);
        if self.placebo_adjusted {
            g.remove(0);
        }
        g
    }
}

/// Anything that predicts a dose-response value.
pub trait DosePredictor {
    fn predict(&self, x: f64) -> f64;

    /// Effect relative to placebo, `f(x) - f(0)`.
    fn effect(&self, x: f64) -> f64 {
        self.predict(x) - self.predict(0.0)
    }
}

impl DosePredictor for FittedModel {
    fn predict(&self, x: f64) -> f64 {
        eval_full(self.family, self.theta.as_slice(), x)
    }
}

/// Whitened GLS problem: `L⁻¹μ̂` and `L⁻¹1` for the Cholesky factor `L` of `Ŝ`.
struct Whitened {
    l: DMatrix<f64>,
    mu: DVector<f64>,
    ones: Option<DVector<f64>>,
    doses: Vec<f64>,
}

fn forward_solve(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let k = b.len();
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

impl Whitened {
    fn new(est: &AnovaEstimate) -> Result<Self> {
        let l = cholesky(est.cov(), "first-stage covariance")?.l();
        let mut mu = est.mu_hat().clone();
        forward_solve(&l, &mut mu);
        let ones = if est.is_placebo_adjusted() {
            None
        } else {
            let mut o = DVector::from_element(est.mu_hat().len(), 1.0);
            forward_solve(&l, &mut o);
            Some(o)
        };
        Ok(Self {
            l,
            mu,
            ones,
            doses: est.design().doses().to_vec(),
        })
    }

    fn whiten(&self, v: Vec<f64>) -> DVector<f64> {
        let mut v = DVector::from_vec(v);
        forward_solve(&self.l, &mut v);
        v
    }

    /// Profiled criterion and `(θ0, θ1)` for a given standardized response vector.
    fn profile(&self, g: &DVector<f64>) -> (f64, f64, f64) {
        let mu = &self.mu;
        match &self.ones {
            Some(ones) => {
                let a11 = ones.dot(ones);
                let a12 = ones.dot(g);
                let a22 = g.dot(g);
                let r1 = ones.dot(mu);
                let r2 = g.dot(mu);
                let det = a11 * a22 - a12 * a12;
                let (b0, b1) = if det > 1e-13 * a11 * a22 {
                    ((a22 * r1 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
                } else {
                    (r1 / a11, 0.0)
                };
                let psi = mu
                    .iter()
                    .zip(ones.iter().zip(g.iter()))
                    .map(|(m, (o, v))| (m - b0 * o - b1 * v).powi(2))
                    .sum();
                (psi, b0, b1)
            }
            None => {
                let a22 = g.dot(g);
                let b1 = if a22 > 0.0 { g.dot(mu) / a22 } else { 0.0 };
                let psi = mu
                    .iter()
                    .zip(g.iter())
                    .map(|(m, v)| (m - b1 * v).powi(2))
                    .sum();
                (psi, 0.0, b1)
            }
        }
    }

    fn profile_shape(&self, family: ModelFamily, shape: &[f64]) -> (f64, f64, f64) {
        let g = self.whiten(
            self.doses
                .iter()
                .map(|&x| eval_standardized(family, shape, x))
                .collect(),
        );
        self.profile(&g)
    }

    /// Weighted linear least squares on whitened columns. Returns `(coefficients, Ψ)`.
    fn linear(&self, columns: Vec<DVector<f64>>) -> Result<(Vec<f64>, f64)> {
        let p = columns.len();
        let x = DMatrix::from_columns(&columns);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &self.mu;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("{p}-parameter GLS normal equations")))?;
        let beta = chol.solve(&xty);
        let resid = &self.mu - &x * &beta;
        Ok((beta.iter().copied().collect(), resid.norm_squared()))
    }
}

/// Minimize the profiled criterion over the shape parameters.
fn search_shape(w: &Whitened, family: ModelFamily, bounds: &FitBounds) -> Vec<f64> {
    let ranges = bounds.ranges();
    let psi = |shape: &[f64]| w.profile_shape(family, shape).0;
    match ranges.len() {
        1 => {
            let (lo, hi) = ranges[0];
            let grid = log_grid(lo, hi, GRID_POINTS);
            let values: Vec<f64> = grid.iter().map(|&v| psi(&[v])).collect();
            let best = argmin(&values);
            let a = grid[best.saturating_sub(1)].ln();
            let b = grid[(best + 1).min(grid.len() - 1)].ln();
            let (x, fx) = brent_minimize(|t| psi(&[t.exp()]), a, b, 1e-8, 200);
            if fx < values[best] {
                vec![x.exp().clamp(lo, hi)]
            } else {
                vec![grid[best]]
            }
        }
        2 => {
            let g0 = log_grid(ranges[0].0, ranges[0].1, GRID_POINTS);
            let g1 = log_grid(ranges[1].0, ranges[1].1, GRID_POINTS);
            let mut best = (f64::INFINITY, g0[0], g1[0]);
            for &a in &g0 {
                for &b in &g1 {
                    let v = psi(&[a, b]);
                    if v < best.0 {
                        best = (v, a, b);
                    }
                }
            }
            let log_lo = [ranges[0].0.ln(), ranges[1].0.ln()];
            let log_hi = [ranges[0].1.ln(), ranges[1].1.ln()];
            let clamp = |t: &[f64]| -> [f64; 2] {
                [
                    t[0].clamp(log_lo[0], log_hi[0]).exp(),
                    t[1].clamp(log_lo[1], log_hi[1]).exp(),
                ]
            };
            let opts = NelderMeadOptions {
                initial_step: 0.05,
                f_tol: 1e-15,
                x_tol: 1e-8,
                max_evals: 2000,
            };
            let (t, fx) = nelder_mead(|t| psi(&clamp(t)), &[best.1.ln(), best.2.ln()], opts);
            if fx < best.0 {
                clamp(&t).to_vec()
            } else {
                vec![best.1, best.2]
            }
        }
        _ => Vec::new(),
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// Fit one dose-response family to first-stage estimates by GLS.
///
/// Placebo-adjusted estimates are fitted without an intercept.
pub fn gls_fit(est: &AnovaEstimate, family: ModelFamily, bounds: &FitBounds) -> Result<FittedModel> {
    let w = Whitened::new(est)?;
    fit_whitened(&w, est.design(), family, bounds)
}

fn fit_whitened(
    w: &Whitened,
    design: &DoseDesign,
    family: ModelFamily,
    bounds: &FitBounds,
) -> Result<FittedModel> {
    let placebo_adjusted = w.ones.is_none();
    let dim = family.full_dim() - usize::from(placebo_adjusted);
    let k = w.doses.len();
    if k < dim {
        return Err(Error::InsufficientDoses(format!(
            "{family} has {dim} free parameters but only {k} estimates"
        )));
    }
    let expected = FitBounds::new(family, bounds.ranges().to_vec());
    if expected.is_err() {
        return Err(Error::InvalidParameter(format!(
            "bounds do not match the {family} family"
        )));
    }

    let (theta, criterion) = match family {
        ModelFamily::Linear => {
            let x = w.whiten(w.doses.clone());
            let mut cols = Vec::new();
            if let Some(ones) = &w.ones {
                cols.push(ones.clone());
            }
            cols.push(x);
            let (beta, psi) = w.linear(cols)?;
            let theta = if placebo_adjusted {
                vec![0.0, beta[0]]
            } else {
                beta
            };
            (theta, psi)
        }
        ModelFamily::Quadratic => {
            let x = w.whiten(w.doses.clone());
            let x2 = w.whiten(w.doses.iter().map(|d| d * d).collect());
            let mut cols = Vec::new();
            if let Some(ones) = &w.ones {
                cols.push(ones.clone());
            }
            cols.push(x);
            cols.push(x2);
            let (beta, psi) = w.linear(cols)?;
            let (b0, b1, b2) = if placebo_adjusted {
                (0.0, beta[0], beta[1])
            } else {
                (beta[0], beta[1], beta[2])
            };
            let theta = quadratic_from_polynomial(b0, b1, b2)
                .map_err(|e| Error::Singular(format!("quadratic fit has no linear term: {e}")))?;
            (theta.0, psi)
        }
        _ => {
            let shape = search_shape(w, family, bounds);
            let (psi, b0, b1) = w.profile_shape(family, &shape);
            let mut theta = vec![b0, b1];
            theta.extend_from_slice(&shape);
            (theta, psi)
        }
    };

    let at_bound: Vec<bool> = match family {
        ModelFamily::Linear | ModelFamily::Quadratic => vec![false; family.nonlinear_count()],
        _ => theta[2..]
            .iter()
            .zip(bounds.ranges())
            .map(|(&v, &(lo, hi))| {
                (v.ln() - lo.ln()).abs() < BOUND_TOL || (hi.ln() - v.ln()).abs() < BOUND_TOL
            })
            .collect(),
    };
    let mut fit = FittedModel {
        family,
        label: family.name().to_string(),
        theta: FullParams(theta),
        criterion: criterion.max(0.0),
        theta_cov: None,
        gaic: criterion.max(0.0) + 2.0 * dim as f64,
        placebo_adjusted,
        at_bound,
        design: design.clone(),
    };
    if !fit.any_at_bound() {
        fit.theta_cov = covariance_whitened(&fit, w).ok();
    }
    Ok(fit)
}

fn covariance_whitened(fit: &FittedModel, w: &Whitened) -> Result<DMatrix<f64>> {
    let p = fit.dim();
    let cols: Vec<DVector<f64>> = (0..p)
        .map(|j| w.whiten(w.doses.iter().map(|&x| fit.gradient(x)[j]).collect()))
        .collect();
    let f = DMatrix::from_columns(&cols);
    let info = f.transpose() * f;
    let cov = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("information matrix of the fit".into()))?
        .inverse();
    check_spd(&cov, "parameter covariance")
        .map_err(|_| Error::Singular("information matrix of the fit".into()))?;
    Ok(cov)
}

/// Asymptotic covariance `(F' Ŝ⁻¹ F)⁻¹` of the free parameters at `θ̂`.
///
/// Computed even when a shape parameter is on its bound; callers decide
/// whether to trust it (see [`FittedModel::at_bound`]).
pub fn theta_covariance(fit: &FittedModel, est: &AnovaEstimate) -> Result<DMatrix<f64>> {
    let w = Whitened::new(est)?;
    covariance_whitened(fit, &w)
}

/// `Ψ(θ)` for arbitrary full parameters.
pub fn criterion_at(est: &AnovaEstimate, family: ModelFamily, theta: &[f64]) -> Result<f64> {
    let w = Whitened::new(est)?;
    let r = w.whiten(
        w.doses
            .iter()
            .zip(est.mu_hat().iter())
            .map(|(&x, &m)| m - eval_full(family, theta, x))
            .collect(),
    );
    Ok(r.norm_squared())
}

pub fn gaic(fit: &FittedModel) -> f64 {
    gaic_with_penalty(fit, 2.0)
}

/// `Ψ(θ̂) + τ·dim(θ)` for a user-chosen penalty `τ`.
pub fn gaic_with_penalty(fit: &FittedModel, tau: f64) -> f64 {
    fit.criterion + tau * fit.dim() as f64
}

/// How to pick one model out of a set of fits.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    MinGaic,
    /// Largest contrast statistic; one entry per fit.
    MaxZ(Vec<f64>),
}

/// Index of the selected fit. Ties go to the earliest fit.
pub fn select_model(fits: &[FittedModel], rule: &Selection) -> Result<usize> {
    if fits.is_empty() {
        return Err(Error::EmptyInput("no fitted models to select from".into()));
    }
    match rule {
        Selection::MinGaic => Ok(argmin(&fits.iter().map(|f| f.gaic).collect::<Vec<_>>())),
        Selection::MaxZ(z) => {
            if z.len() != fits.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} statistics for {} fits",
                    z.len(),
                    fits.len()
                )));
            }
            Ok(argmin(&z.iter().map(|v| -v).collect::<Vec<_>>()))
        }
    }
}

/// gAIC-weighted model average.
#[derive(Debug, Clone)]
pub struct ModelAverage {
    pub fits: Vec<FittedModel>,
    pub weights: Vec<f64>,
}

impl DosePredictor for ModelAverage {
    fn predict(&self, x: f64) -> f64 {
        self.fits
            .iter()
            .zip(&self.weights)
            .map(|(f, w)| w * f.predict(x))
            .sum()
    }
}

/// Buckland weights `exp(-Δ_m / 2) / Σ exp(-Δ_j / 2)` with `Δ_m = gAIC_m - min gAIC`.
pub fn averaging_weights(gaics: &[f64]) -> Vec<f64> {
    let min = gaics.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = gaics.iter().map(|g| (-(g - min) / 2.0).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

pub fn model_average(fits: Vec<FittedModel>) -> Result<ModelAverage> {
    if fits.is_empty() {
        return Err(Error::EmptyInput("no fitted models to average".into()));
    }
    let weights = averaging_weights(&fits.iter().map(|f| f.gaic).collect::<Vec<_>>());
    Ok(ModelAverage { fits, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Increase,
    Decrease,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inc" | "increase" => Ok(Direction::Increase),
            "dec" | "decrease" => Ok(Direction::Decrease),
            other => Err(Error::InvalidParameter(format!(
                "direction must be 'inc' or 'dec', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDoseEstimate {
    pub dose: Option<f64>,
    pub delta: f64,
    pub direction: Direction,
    pub source: String,
}

/// Points used to bracket the first crossing of the target effect.
const TARGET_SCAN: usize = 2000;

fn scan_target<P: DosePredictor + ?Sized>(pred: &P, delta: f64, sign: f64, xk: f64) -> Option<f64> {
    let gap = |x: f64| sign * pred.effect(x) - delta;
    let mut prev: f64 = 0.0;
    let mut g_prev = gap(0.0);
    for i in 1..=TARGET_SCAN {
        let x = xk * i as f64 / TARGET_SCAN as f64;
        let g = gap(x);
        if g >= 0.0 {
            if g_prev >= 0.0 {
                return Some(prev.max(f64::MIN_POSITIVE));
            }
            return crate::numeric::brent_root(gap, prev, x, 1e-12 * xk.max(1.0), 200).ok();
        }
        prev = x;
        g_prev = g;
    }
    None
}

/// Smallest dose in `(0, xK]` whose modelled effect over placebo reaches `delta`.
pub fn target_dose(fit: &FittedModel, delta: f64, direction: Direction) -> Result<TargetDoseEstimate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let xk = fit.design.max_dose();
    let sign = match direction {
        Direction::Increase => 1.0,
        Direction::Decrease => -1.0,
    };
    let th = fit.theta.as_slice();
    let scale = sign * th[1];
    let closed = match fit.family {
        ModelFamily::Linear => Some(if scale > 0.0 { Some(delta / scale) } else { None }),
        ModelFamily::Emax => Some(if scale > delta {
            Some(delta * th[2] / (scale - delta))
        } else {
            None
        }),
        _ => None,
    };
    let dose = match closed {
        Some(d) => d.filter(|&d| d > 0.0 && d <= xk),
        None => scan_target(fit, delta, sign, xk),
    };
    Ok(TargetDoseEstimate {
        dose,
        delta,
        direction,
        source: fit.label.clone(),
    })
}

/// Target dose for any predictor on `(0, max_dose]`, found by scanning and root finding.
pub fn target_dose_for<P: DosePredictor + ?Sized>(
    pred: &P,
    source: &str,
    delta: f64,
    direction: Direction,
    max_dose: f64,
) -> Result<TargetDoseEstimate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let sign = match direction {
        Direction::Increase => 1.0,
        Direction::Decrease => -1.0,
    };
    Ok(TargetDoseEstimate {
        dose: scan_target(pred, delta, sign, max_dose),
        delta,
        direction,
        source: source.to_string(),
    })
}

/// One point of a fitted curve with a pointwise interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub dose: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Fitted curve with delta-method intervals at confidence `level`.
///
/// Returns the curve and a flag that is true when the covariance is
/// unreliable because a shape parameter sits on its bound.
pub fn predict_with_ci(
    fit: &FittedModel,
    est: &AnovaEstimate,
    doses: &[f64],
    level: f64,
) -> Result<(Vec<CurvePoint>, bool)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {level}")));
    }
    let cov = match &fit.theta_cov {
        Some(c) => c.clone(),
        None => theta_covariance(fit, est)?,
    };
    let z = qnorm(0.5 + level / 2.0);
    let points = doses
        .iter()
        .map(|&x| {
            let g = DVector::from_vec(fit.gradient(x));
            let se = (g.dot(&(&cov * &g))).max(0.0).sqrt();
            let f = fit.predict(x);
            CurvePoint {
                dose: x,
                fit: f,
                lower: f - z * se,
                upper: f + z * se,
            }
        })
        .collect();
    Ok((points, fit.any_at_bound()))
}

/// Parametric bootstrap settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub seed: u64,
    pub quantiles: (f64, f64),
    /// Doses at which curve intervals are reported.
    pub doses: Vec<f64>,
}

impl BootstrapConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self {
            draws,
            seed,
            quantiles: (0.05, 0.95),
            doses: Vec::new(),
        }
    }
}

/// Maximum fraction of bootstrap refits allowed to fail.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Full parameter vectors of the successful refits, in draw order.
    pub samples: Vec<Vec<f64>>,
    pub failed: usize,
    pub draws: usize,
    /// Quantile interval per free parameter.
    pub theta_intervals: Vec<(f64, f64)>,
    pub curve: Vec<CurvePoint>,
}

impl BootstrapResult {
    pub fn failed_fraction(&self) -> f64 {
        self.failed as f64 / self.draws as f64
    }
}

/// Stream of standard normals for one bootstrap draw.
pub(crate) fn draw_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw `μ* ~ N(μ̂, Ŝ)` repeatedly and refit, returning quantile intervals.
pub fn bootstrap(
    est: &AnovaEstimate,
    family: ModelFamily,
    bounds: &FitBounds,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if cfg.draws < 100 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 100 draws, got {}",
            cfg.draws
        )));
    }
    let (qlo, qhi) = cfg.quantiles;
    if !(0.0 <= qlo && qlo < qhi && qhi <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantiles must satisfy 0 <= lo < hi <= 1, got ({qlo}, {qhi})"
        )));
    }
    let base = Whitened::new(est)?;
    let k = est.mu_hat().len();
    let free_from = usize::from(est.is_placebo_adjusted());

    let results: Vec<Option<Vec<f64>>> = (0..cfg.draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = draw_rng(cfg.seed, draw as u64);
            // whitened draw: L⁻¹μ* = L⁻¹μ̂ + ε
            let eps = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            let w = Whitened {
                l: base.l.clone(),
                mu: &base.mu + eps,
                ones: base.ones.clone(),
                doses: base.doses.clone(),
            };
            fit_whitened(&w, est.design(), family, bounds)
                .ok()
                .map(|f| f.theta.0)
                .filter(|t| t.iter().all(|v| v.is_finite()))
        })
        .collect();

    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed as f64 > MAX_FAILED_FRACTION * cfg.draws as f64 {
        return Err(Error::BootstrapFailure(format!(
            "{failed} of {} refits failed",
            cfg.draws
        )));
    }
    let samples: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let interval = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, qlo), quantile_sorted(&v, qhi))
    };
    let theta_intervals = (free_from..family.full_dim())
        .map(|j| interval(samples.iter().map(|t| t[j]).collect()))
        .collect();
    let curve = cfg
        .doses
        .iter()
        .map(|&x| {
            let (lower, upper) = interval(samples.iter().map(|t| eval_full(family, t, x)).collect());
            CurvePoint {
                dose: x,
                fit: f64::NAN,
                lower,
                upper,
            }
        })
        .collect();
    Ok(BootstrapResult {
        samples,
        failed,
        draws: cfg.draws,
        theta_intervals,
        curve,
    })
}
