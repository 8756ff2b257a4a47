//! The MCP step: multiple contrast test over candidate dose-response shapes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drmodels::{CandidateModel, DoseDesign};
use crate::error::{Error, Result};
use crate::linalg::{check_spd, collapse_to_placebo_differences};
use crate::mvnorm::{adjusted_pvalues, corr_from_cov, critical_value, CorrMatrix, QmcConfig};
use crate::optcontrast::{contrast_matrix, ContrastMatrix};

/// First-stage estimates `μ̂ ~ N(μ, Ŝ)` at the design doses.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaEstimate {
    design: DoseDesign,
    mu_hat: DVector<f64>,
    cov: DMatrix<f64>,
}

pub const SCHEMA: &str = "dosekit/v1";

#[derive(Serialize, Deserialize)]
struct EstimateDoc {
    schema: String,
    doses: Vec<f64>,
    mu: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default)]
    placebo_adjusted: bool,
}

impl AnovaEstimate {
    pub fn new(design: DoseDesign, mu_hat: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = design.len();
        if mu_hat.len() != k || cov.nrows() != k || cov.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "design has {k} doses, estimate has {} entries and a {}x{} covariance",
                mu_hat.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mu_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("estimates must be finite".into()));
        }
        check_spd(&cov, "first-stage covariance")?;
        Ok(Self {
            design,
            mu_hat,
            cov,
        })
    }

    pub fn design(&self) -> &DoseDesign {
        &self.design
    }

    pub fn mu_hat(&self) -> &DVector<f64> {
        &self.mu_hat
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_placebo_adjusted(&self) -> bool {
        self.design.is_placebo_adjusted()
    }

    /// Flip the sign of the estimates, turning a decreasing endpoint into an increasing one.
    pub fn negated(&self) -> Self {
        Self {
            design: self.design.clone(),
            mu_hat: -&self.mu_hat,
            cov: self.cov.clone(),
        }
    }

    /// Differences from placebo `(C0 μ̂, C0 Ŝ C0')` on the active doses.
    pub fn to_placebo_differences(&self) -> Result<Self> {
        if self.is_placebo_adjusted() {
            return Ok(self.clone());
        }
        let (mu_c, s_c) = collapse_to_placebo_differences(&self.mu_hat, &self.cov);
        Self::new(self.design.without_placebo()?, mu_c, s_c)
    }

    pub fn to_json(&self) -> String {
        let doc = EstimateDoc {
            schema: SCHEMA.to_string(),
            doses: self.design.doses().to_vec(),
            mu: self.mu_hat.iter().copied().collect(),
            cov: self
                .cov
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            placebo_adjusted: self.is_placebo_adjusted(),
        };
        serde_json::to_string_pretty(&doc).expect("estimate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EstimateDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidData(format!("estimate JSON: {e}")))?;
        if doc.schema != SCHEMA {
            return Err(Error::InvalidData(format!(
                "unsupported schema '{}', expected '{SCHEMA}'",
                doc.schema
            )));
        }
        let k = doc.doses.len();
        if doc.cov.len() != k || doc.cov.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!("covariance must be {k}x{k}")));
        }
        let design = DoseDesign::from_doses(doc.doses, doc.placebo_adjusted)?;
        let cov = DMatrix::from_fn(k, k, |i, j| doc.cov[i][j]);
        Self::new(design, DVector::from_vec(doc.mu), cov)
    }
}

/// Covariance used to build the optimal contrasts.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastSource {
    /// Recompute contrasts from the observed `Ŝ`.
    Observed,
    /// Use a covariance fixed at the planning stage.
    Planned(DMatrix<f64>),
}

/// Outcome of the multiple contrast test.
#[derive(Debug, Clone, PartialEq)]
pub struct MctResult {
    pub labels: Vec<String>,
    pub contrasts: ContrastMatrix,
    pub z: Vec<f64>,
    pub zmax: f64,
    pub critical: f64,
    pub adjusted_p: Vec<f64>,
    pub significant: Vec<bool>,
    pub alpha: f64,
    pub correlation: CorrMatrix,
    /// False if any QMC evaluation missed its target error.
    pub accuracy_reached: bool,
}

impl MctResult {
    /// True if at least one contrast is significant.
    pub fn signal(&self) -> bool {
        self.significant.iter().any(|&s| s)
    }
}

/// Multiple contrast test of a flat dose-response profile against the
/// candidate shapes. Guesstimates are used as given, never re-estimated.
pub fn mct_test(
    est: &AnovaEstimate,
    models: &[CandidateModel],
    alpha: f64,
    source: &ContrastSource,
    cfg: &QmcConfig,
) -> Result<MctResult> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no candidate models".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 0.5), got {alpha}")));
    }
    let contrast_cov = match source {
        ContrastSource::Observed => est.cov(),
        ContrastSource::Planned(s) => {
            check_spd(s, "planning covariance")?;
            s
        }
    };
    let contrasts = contrast_matrix(models, est.design(), contrast_cov)?;
    let c = &contrasts.matrix;
    let v = c.transpose() * est.cov() * c;
    let estimates = c.transpose() * est.mu_hat();
    let z: Vec<f64> = (0..c.ncols())
        .map(|m| estimates[m] / v[(m, m)].sqrt())
        .collect();
    let correlation = corr_from_cov(&v)?;
    let crit = critical_value(&correlation, alpha, cfg)?;
    let adjusted_p = adjusted_pvalues(&z, &correlation, cfg)?;
    let significant = z.iter().map(|&zm| zm > crit.value).collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MctResult {
        labels: contrasts.labels.clone(),
        contrasts,
        z,
        zmax,
        critical: crit.value,
        adjusted_p,
        significant,
        alpha,
        correlation,
        accuracy_reached: crit.accuracy_reached,
    })
}

/// Indices of significant models ordered by decreasing z (ties keep input order).
pub fn reference_indices(result: &MctResult) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..result.z.len())
        .filter(|&m| result.significant[m])
        .collect();
    idx.sort_by(|&a, &b| result.z[b].total_cmp(&result.z[a]));
    idx
}

/// Significant candidate models ordered by decreasing z. Empty means no signal.
pub fn reference_set(result: &MctResult, models: &[CandidateModel]) -> Vec<CandidateModel> {
    reference_indices(result)
        .into_iter()
        .map(|m| models[m].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drmodels::ModelFamily;
    use crate::numeric::qnorm;
    use approx::assert_abs_diff_eq;

    fn simple_estimate(mu: Vec<f64>) -> AnovaEstimate {
        let k = mu.len();
        let design = DoseDesign::new((0..k).map(|i| i as f64).collect()).unwrap();
        AnovaEstimate::new(design, DVector::from_vec(mu), DMatrix::identity(k, k) * 0.1).unwrap()
    }

    #[test]
    fn estimate_validation() {
        let design = DoseDesign::new(vec![0.0, 1.0]).unwrap();
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(
            AnovaEstimate::new(design.clone(), DVector::zeros(2), zero),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(AnovaEstimate::new(design, DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let est = simple_estimate(vec![0.1, 0.5, 0.7]);
        let back = AnovaEstimate::from_json(&est.to_json()).unwrap();
        assert_eq!(back, est);
        let adj = est.to_placebo_differences().unwrap();
        assert_eq!(AnovaEstimate::from_json(&adj.to_json()).unwrap(), adj);
        assert!(AnovaEstimate::from_json(r#"{"schema":"other","doses":[],"mu":[],"cov":[]}"#).is_err());
    }

    #[test]
    fn single_model_uses_normal_quantile() {
        let est = simple_estimate(vec![0.0, 0.3, 0.5, 0.6]);
        let models = vec![CandidateModel::linear()];
        let res = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &QmcConfig::default())
            .unwrap();
        assert_abs_diff_eq!(res.critical, qnorm(0.975), epsilon = 1e-12);
        let raw = 1.0 - crate::numeric::pnorm(res.z[0]);
        assert_abs_diff_eq!(res.adjusted_p[0], raw, epsilon = 1e-12);
    }

    #[test]
    fn flat_profile_has_no_signal() {
        let est = simple_estimate(vec![1.3; 5]);
        let models = vec![
            CandidateModel::new(ModelFamily::Emax, vec![1.0]).unwrap(),
            CandidateModel::linear(),
        ];
        let res = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &QmcConfig::default())
            .unwrap();
        assert!(res.z.iter().all(|z| z.abs() < 1e-12));
        assert!(!res.signal());
        assert!(reference_set(&res, &models).is_empty());
    }

    #[test]
    fn reference_set_is_stable_on_ties() {
        let est = simple_estimate(vec![0.0, 1.0, 2.0, 3.0]);
        let models = vec![
            CandidateModel::linear().with_label("a"),
            CandidateModel::new(ModelFamily::Emax, vec![0.5]).unwrap().with_label("b"),
            CandidateModel::linear().with_label("c"),
        ];
        let res = mct_test(&est, &models, 0.025, &ContrastSource::Observed, &QmcConfig::default())
            .unwrap();
        let labels: Vec<String> = reference_set(&res, &models).iter().map(|m| m.label()).collect();
        assert_eq!(labels, vec!["a", "c", "b"]);
    }
}
