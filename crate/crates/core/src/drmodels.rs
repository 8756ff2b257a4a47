//! Dose-response model families.
//!
//! Every family is partially linear: `f(x, θ) = θ0 + θ1 · f⁰(x, θ⁰)`, where the
//! standardized model `f⁰` carries the shape and vanishes at placebo.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::brent_root;

/// Ordered dose grid. Placebo (dose 0) comes first unless the design is
/// placebo-adjusted, in which case only active doses are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseDesign {
    doses: Vec<f64>,
    placebo_adjusted: bool,
}

impl DoseDesign {
    /// Design with placebo: `doses[0] == 0`, strictly increasing, at least two doses.
    pub fn new(doses: Vec<f64>) -> Result<Self> {
        if doses.len() < 2 {
            return Err(Error::InvalidDesign("need at least two doses".into()));
        }
        if doses[0] != 0.0 {
            return Err(Error::InvalidDesign(format!(
                "first dose must be placebo (0), got {}",
                doses[0]
            )));
        }
        Self::check_increasing(&doses)?;
        Ok(Self {
            doses,
            placebo_adjusted: false,
        })
    }

    /// Placebo-adjusted design over active doses only; all doses must be positive.
    pub fn placebo_adjusted(doses: Vec<f64>) -> Result<Self> {
        if doses.is_empty() {
            return Err(Error::InvalidDesign("need at least one active dose".into()));
        }
        if doses.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidDesign(
                "placebo-adjusted designs contain active (positive) doses only".into(),
            ));
        }
        Self::check_increasing(&doses)?;
        Ok(Self {
            doses,
            placebo_adjusted: true,
        })
    }

    /// Build from raw doses, choosing the placebo-adjusted form when requested.
    pub fn from_doses(doses: Vec<f64>, placebo_adjusted: bool) -> Result<Self> {
        if placebo_adjusted {
            Self::placebo_adjusted(doses)
        } else {
            Self::new(doses)
        }
    }

    fn check_increasing(doses: &[f64]) -> Result<()> {
        if doses.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidDesign("doses must be finite and nonnegative".into()));
        }
        if doses.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidDesign(
                "doses must be strictly increasing without duplicates".into(),
            ));
        }
        Ok(())
    }

    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    pub fn is_placebo_adjusted(&self) -> bool {
        self.placebo_adjusted
    }

    pub fn max_dose(&self) -> f64 {
        *self.doses.last().expect("design is nonempty")
    }

    /// The placebo-adjusted counterpart: active doses of a design with placebo.
    pub fn without_placebo(&self) -> Result<Self> {
        if self.placebo_adjusted {
            return Ok(self.clone());
        }
        Self::placebo_adjusted(self.doses[1..].to_vec())
    }
}

/// Supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Linear,
    Emax,
    #[serde(alias = "sigEmax", alias = "sig_emax")]
    SigEmax,
    Quadratic,
    #[serde(alias = "exp")]
    Exponential,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::Linear,
        ModelFamily::Emax,
        ModelFamily::SigEmax,
        ModelFamily::Quadratic,
        ModelFamily::Exponential,
    ];

    /// Number of parameters of the standardized model.
    pub fn nonlinear_count(self) -> usize {
        match self {
            ModelFamily::Linear => 0,
            ModelFamily::Emax | ModelFamily::Quadratic | ModelFamily::Exponential => 1,
            ModelFamily::SigEmax => 2,
        }
    }

    /// Dimension of the full parameter vector `(θ0, θ1, θ⁰…)`.
    pub fn full_dim(self) -> usize {
        2 + self.nonlinear_count()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Linear => "linear",
            ModelFamily::Emax => "emax",
            ModelFamily::SigEmax => "sigemax",
            ModelFamily::Quadratic => "quadratic",
            ModelFamily::Exponential => "exponential",
        }
    }

    /// Names of the full parameters, in order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            ModelFamily::Linear => &["e0", "delta"],
            ModelFamily::Emax => &["e0", "eMax", "ed50"],
            ModelFamily::SigEmax => &["e0", "eMax", "ed50", "h"],
            ModelFamily::Quadratic => &["e0", "b1", "delta"],
            ModelFamily::Exponential => &["e0", "e1", "delta"],
        }
    }

    /// Reject standardized parameters outside the family's domain.
    pub fn validate_shape_params(self, theta0: &[f64]) -> Result<()> {
        if theta0.len() != self.nonlinear_count() {
            return Err(Error::InvalidParameter(format!(
                "{} expects {} shape parameter(s), got {}",
                self.name(),
                self.nonlinear_count(),
                theta0.len()
            )));
        }
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("shape parameters must be finite".into()));
        }
        match self {
            ModelFamily::Emax if theta0[0] <= 0.0 => Err(Error::InvalidParameter(format!(
                "ED50 must be positive, got {}",
                theta0[0]
            ))),
            ModelFamily::SigEmax if theta0[0] <= 0.0 || theta0[1] <= 0.0 => {
                Err(Error::InvalidParameter(format!(
                    "sigEmax needs ED50 > 0 and h > 0, got ({}, {})",
                    theta0[0], theta0[1]
                )))
            }
            ModelFamily::Exponential if theta0[0] <= 0.0 => Err(Error::InvalidParameter(
                format!("exponential delta must be positive, got {}", theta0[0]),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelFamily::Linear),
            "emax" => Ok(ModelFamily::Emax),
            "sigemax" | "sig_emax" => Ok(ModelFamily::SigEmax),
            "quadratic" => Ok(ModelFamily::Quadratic),
            "exponential" | "exp" => Ok(ModelFamily::Exponential),
            other => Err(Error::InvalidParameter(format!("unknown model family '{other}'"))),
        }
    }
}

/// A candidate shape: a family plus guesstimates of its standardized parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub family: ModelFamily,
    #[serde(default)]
    pub guesstimates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl CandidateModel {
    pub fn new(family: ModelFamily, guesstimates: Vec<f64>) -> Result<Self> {
        family.validate_shape_params(&guesstimates)?;
        Ok(Self {
            family,
            guesstimates,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn linear() -> Self {
        Self {
            family: ModelFamily::Linear,
            guesstimates: Vec::new(),
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.family.name().to_string())
    }

    /// Validate guesstimates, including the exponential overflow floor for `design`.
    pub fn validate_for_design(&self, design: &DoseDesign) -> Result<()> {
        self.family.validate_shape_params(&self.guesstimates)?;
        if self.family == ModelFamily::Exponential {
            check_exponential_floor(self.guesstimates[0], design.max_dose())?;
        }
        Ok(())
    }
}

/// Smallest admissible exponential delta, relative to the maximum dose.
pub const EXPONENTIAL_DELTA_FLOOR: f64 = 1e-3;

pub(crate) fn check_exponential_floor(delta: f64, max_dose: f64) -> Result<()> {
    if delta < EXPONENTIAL_DELTA_FLOOR * max_dose {
        return Err(Error::InvalidParameter(format!(
            "exponential delta {delta} is below the floor {} for max dose {max_dose}",
            EXPONENTIAL_DELTA_FLOOR * max_dose
        )));
    }
    Ok(())
}

/// Full parameter vector `(θ0, θ1, θ⁰…)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FullParams(pub Vec<f64>);

impl FullParams {
    pub fn new(family: ModelFamily, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != family.full_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} parameters, got {}",
                family.name(),
                family.full_dim(),
                theta.len()
            )));
        }
        family.validate_shape_params(&theta[2..])?;
        Ok(Self(theta))
    }

    pub fn intercept(&self) -> f64 {
        self.0[0]
    }

    pub fn scale(&self) -> f64 {
        self.0[1]
    }

    pub fn shape(&self) -> &[f64] {
        &self.0[2..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `log(exp(a) - 1)` for `a > 0`, stable for large `a`.
fn log_expm1(a: f64) -> f64 {
    if a > 30.0 {
        a + (-(-a).exp()).ln_1p()
    } else {
        a.exp_m1().ln()
    }
}

/// Standardized model `f⁰(x, θ⁰)`.
pub fn eval_standardized(family: ModelFamily, theta0: &[f64], x: f64) -> f64 {
    match family {
        ModelFamily::Linear => x,
        ModelFamily::Emax => x / (x + theta0[0]),
        ModelFamily::SigEmax => {
            if x <= 0.0 {
                return 0.0;
            }
            let r = (theta0[1] * (x / theta0[0]).ln()).exp();
            if r.is_infinite() {
                1.0
            } else {
                r / (1.0 + r)
            }
        }
        ModelFamily::Quadratic => x + theta0[0] * x * x,
        ModelFamily::Exponential => (x / theta0[0]).exp_m1(),
    }
}

/// Partial derivatives of `f⁰` with respect to the standardized parameters.
pub fn gradient_standardized(family: ModelFamily, theta0: &[f64], x: f64) -> Vec<f64> {
    match family {
        ModelFamily::Linear => Vec::new(),
        ModelFamily::Emax => {
            let d = x + theta0[0];
            vec![-x / (d * d)]
        }
        ModelFamily::SigEmax => {
            if x <= 0.0 {
                return vec![0.0, 0.0];
            }
            let (ed50, h) = (theta0[0], theta0[1]);
            let lr = (x / ed50).ln();
            let r = (h * lr).exp();
            // r / (1 + r)^2, written to stay finite for extreme r
            let w = if r.is_infinite() || r > 1e150 {
                1.0 / r
            } else {
                r / ((1.0 + r) * (1.0 + r))
            };
            vec![-(h / ed50) * w, lr * w]
        }
        ModelFamily::Quadratic => vec![x * x],
        ModelFamily::Exponential => {
            let d = theta0[0];
            vec![-x / (d * d) * (x / d).exp()]
        }
    }
}

/// Full model `f(x, θ) = θ0 + θ1 f⁰(x, θ⁰)`.
pub fn eval_full(family: ModelFamily, theta: &[f64], x: f64) -> f64 {
    theta[0] + theta[1] * eval_standardized(family, &theta[2..], x)
}

/// Analytic gradient of [`eval_full`] with respect to `(θ0, θ1, θ⁰…)`.
pub fn gradient_full(family: ModelFamily, theta: &[f64], x: f64) -> Vec<f64> {
    let shape = &theta[2..];
    let mut g = Vec::with_capacity(family.full_dim());
    g.push(1.0);
    g.push(eval_standardized(family, shape, x));
    g.extend(
        gradient_standardized(family, shape, x)
            .into_iter()
            .map(|d| theta[1] * d),
    );
    g
}

/// Standardized responses `μ⁰` of a candidate at the design doses.
pub fn shape_vector(model: &CandidateModel, design: &DoseDesign) -> Vec<f64> {
    design
        .doses()
        .iter()
        .map(|&x| eval_standardized(model.family, &model.guesstimates, x))
        .collect()
}

/// Vertex dose of the quadratic standardized model `x + δx²` (`δ < 0`).
pub fn quadratic_vertex(delta: f64) -> Result<f64> {
    if !(delta < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quadratic has an interior maximum only for delta < 0, got {delta}"
        )));
    }
    Ok(-1.0 / (2.0 * delta))
}

/// Quadratic `δ` placing the maximum effect at `dose`.
pub fn quadratic_delta_for_vertex(dose: f64) -> Result<f64> {
    if !(dose > 0.0) {
        return Err(Error::InvalidParameter(format!("vertex dose must be positive, got {dose}")));
    }
    Ok(-1.0 / (2.0 * dose))
}

/// Maximum of `f⁰` over `[0, max_dose]`, computed analytically per family.
pub fn max_standardized(family: ModelFamily, theta0: &[f64], max_dose: f64) -> f64 {
    match family {
        ModelFamily::Quadratic => {
            let delta = theta0[0];
            let at_end = eval_standardized(family, theta0, max_dose);
            if delta < 0.0 {
                let vertex = -1.0 / (2.0 * delta);
                if vertex < max_dose {
                    return -1.0 / (4.0 * delta);
                }
            }
            at_end.max(0.0)
        }
        // monotone increasing families peak at the top dose
        _ => eval_standardized(family, theta0, max_dose),
    }
}

/// Guesstimate for a one-parameter shape from "a fraction `p` of the maximum
/// effect is reached at dose `dose`".
///
/// For Emax the maximum effect is the asymptote, giving `ED50 = d (1-p) / p`.
/// For the exponential and quadratic families the maximum is taken over the
/// design's dose range and the shape parameter is found by bracketed root finding.
pub fn guesstimate_from_anchor(
    family: ModelFamily,
    dose: f64,
    p: f64,
    design: &DoseDesign,
) -> Result<Vec<f64>> {
    let xk = design.max_dose();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must be in (0, 1), got {p}")));
    }
    if !(dose > 0.0 && dose <= xk) {
        return Err(Error::InvalidParameter(format!(
            "anchor dose {dose} must lie in (0, {xk}]"
        )));
    }
    match family {
        ModelFamily::Linear => Err(Error::InvalidParameter(
            "the linear model has no shape parameter".into(),
        )),
        ModelFamily::SigEmax => Err(Error::InvalidParameter(
            "sigEmax has two shape parameters; use sigemax_from_anchors".into(),
        )),
        ModelFamily::Emax => Ok(vec![dose * (1.0 - p) / p]),
        ModelFamily::Exponential => exponential_from_anchor(dose, p, xk).map(|d| vec![d]),
        ModelFamily::Quadratic => quadratic_from_anchor(dose, p, xk).map(|d| vec![d]),
    }
}

/// sigEmax `(ED50, h)` from two anchors `(dose, fraction of asymptotic maximum)`.
pub fn sigemax_from_anchors(first: (f64, f64), second: (f64, f64)) -> Result<Vec<f64>> {
    let ((d1, p1), (d2, p2)) = (first, second);
    for &(d, p) in &[first, second] {
        if !(p > 0.0 && p < 1.0) || !(d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "anchor ({d}, {p}) needs dose > 0 and fraction in (0, 1)"
            )));
        }
    }
    if d1 == d2 || (p1 - p2) * (d1 - d2) <= 0.0 {
        return Err(Error::NoSolutionInRange(
            "sigEmax anchors must be increasing in both dose and fraction".into(),
        ));
    }
    let (l1, l2) = ((p1 / (1.0 - p1)).ln(), (p2 / (1.0 - p2)).ln());
    let h = (l1 - l2) / (d1 / d2).ln();
    let ed50 = d1 * (-l1 / h).exp();
    Ok(vec![ed50, h])
}

fn exponential_ratio_log(delta: f64, dose: f64, xk: f64) -> f64 {
    log_expm1(dose / delta) - log_expm1(xk / delta)
}

fn exponential_from_anchor(dose: f64, p: f64, xk: f64) -> Result<f64> {
    // the ratio rises monotonically in delta from 0 towards dose / xk
    if p >= dose / xk {
        return Err(Error::NoSolutionInRange(format!(
            "exponential shapes reach at most {:.4} of the maximum at dose {dose}",
            dose / xk
        )));
    }
    let target = p.ln();
    let lo = (EXPONENTIAL_DELTA_FLOOR * xk).ln();
    let mut hi = xk.ln();
    let g = |ld: f64| exponential_ratio_log(ld.exp(), dose, xk) - target;
    if g(lo) > 0.0 {
        return Err(Error::NoSolutionInRange(format!(
            "anchor ({dose}, {p}) needs delta below the floor {}",
            EXPONENTIAL_DELTA_FLOOR * xk
        )));
    }
    while g(hi) < 0.0 {
        hi += 2.0;
        if hi > lo + 60.0 {
            return Err(Error::NoSolutionInRange("exponential anchor".into()));
        }
    }
    brent_root(g, lo, hi, 1e-14, 200).map(f64::exp)
}

fn quadratic_from_anchor(dose: f64, p: f64, xk: f64) -> Result<f64> {
    let ratio = |delta: f64| {
        eval_standardized(ModelFamily::Quadratic, &[delta], dose)
            / max_standardized(ModelFamily::Quadratic, &[delta], xk)
    };
    let linear_ratio = dose / xk;
    if (p - linear_ratio).abs() < 1e-15 {
        return Ok(0.0);
    }
    if p > linear_ratio {
        // concave branch: vertex moves from beyond xk down to the anchor dose
        let lo = -1.0 / (2.0 * dose);
        brent_root(|d| ratio(d) - p, lo, 0.0, 1e-15, 200)
    } else {
        // convex branch: the ratio falls from dose/xk towards (dose/xk)^2
        if p <= linear_ratio * linear_ratio {
            return Err(Error::NoSolutionInRange(format!(
                "quadratic shapes cannot place {p} of the maximum at dose {dose}"
            )));
        }
        let mut hi = 1.0 / xk;
        while ratio(hi) > p {
            hi *= 4.0;
            if hi > 1e12 / xk {
                return Err(Error::NoSolutionInRange("quadratic anchor".into()));
            }
        }
        brent_root(|d| ratio(d) - p, 0.0, hi, 1e-15, 200)
    }
}

/// Scale a standardized shape to a full model with the given placebo response
/// and maximum change from placebo over `[0, max dose]`.
pub fn scale_to_effects(
    model: &CandidateModel,
    placebo_effect: f64,
    max_effect: f64,
    design: &DoseDesign,
) -> Result<FullParams> {
    if max_effect == 0.0 || !max_effect.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "max effect must be finite and nonzero, got {max_effect}"
        )));
    }
    model.family.validate_shape_params(&model.guesstimates)?;
    let peak = max_standardized(model.family, &model.guesstimates, design.max_dose());
    if !(peak > 1e-12) || !peak.is_finite() {
        return Err(Error::DegenerateShape(format!(
            "{} shape is constant over the design",
            model.label()
        )));
    }
    let mut theta = vec![placebo_effect, max_effect / peak];
    theta.extend_from_slice(&model.guesstimates);
    Ok(FullParams(theta))
}

/// Convert the polynomial form `b0 + b1 x + b2 x²` to `(θ0, θ1, δ)` with `δ = b2 / b1`.
pub fn quadratic_from_polynomial(b0: f64, b1: f64, b2: f64) -> Result<FullParams> {
    if b1 == 0.0 {
        return Err(Error::InvalidParameter(
            "quadratic with zero linear term has no (θ1, δ) representation".into(),
        ));
    }
    Ok(FullParams(vec![b0, b1, b2 / b1]))
}

/// Convert `(θ0, θ1, δ)` to polynomial coefficients `(b0, b1, b2)`.
pub fn quadratic_to_polynomial(theta: &[f64]) -> [f64; 3] {
    [theta[0], theta[1], theta[1] * theta[2]]
}

/// JSON document holding a candidate set and its dose grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub models: Vec<CandidateModel>,
    pub doses: Vec<f64>,
}

impl ModelSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut set: ModelSet = serde_json::from_str(text)
            .map_err(|e| Error::InvalidData(format!("model set JSON: {e}")))?;
        set.assign_labels();
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model set serializes")
    }

    pub fn design(&self) -> Result<DoseDesign> {
        DoseDesign::new(self.doses.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::EmptyInput("model set has no models".into()));
        }
        let design = self.design()?;
        self.models
            .iter()
            .try_for_each(|m| m.validate_for_design(&design))
    }

    /// Give unlabeled models their family name, numbered when a family repeats.
    pub fn assign_labels(&mut self) {
        assign_labels(&mut self.models);
    }
}

/// Label unlabeled models by family name, numbering repeated families from 1.
pub fn assign_labels(models: &mut [CandidateModel]) {
    let count = |f: ModelFamily| models.iter().filter(|m| m.family == f).count();
    let counts: Vec<usize> = models.iter().map(|m| count(m.family)).collect();
    let mut seen = std::collections::HashMap::new();
    for (m, total) in models.iter_mut().zip(counts) {
        let idx = seen.entry(m.family).or_insert(0usize);
        *idx += 1;
        if m.label.is_none() {
            m.label = Some(if total > 1 {
                format!("{}{}", m.family.name(), idx)
            } else {
                m.family.name().to_string()
            });
        }
    }
}
