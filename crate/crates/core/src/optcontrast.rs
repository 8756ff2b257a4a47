//! Optimal contrasts for candidate shapes under a general covariance matrix.

use nalgebra::{DMatrix, DVector};

use crate::drmodels::{shape_vector, CandidateModel, DoseDesign};
use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// Contrast vectors in columns, one per candidate model.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    pub labels: Vec<String>,
    /// `K x M`, column `m` belongs to `labels[m]`.
    pub matrix: DMatrix<f64>,
    pub placebo_adjusted: bool,
}

impl ContrastMatrix {
    pub fn column(&self, m: usize) -> DVector<f64> {
        self.matrix.column(m).into_owned()
    }

    pub fn n_models(&self) -> usize {
        self.matrix.ncols()
    }
}

fn check_shape(mu0: &DVector<f64>) -> Result<()> {
    let max = mu0.max();
    let min = mu0.min();
    if !(max - min > 1e-12 * (1.0 + mu0.norm())) {
        return Err(Error::DegenerateShape(
            "standardized shape is constant across doses".into(),
        ));
    }
    Ok(())
}

fn normalize_with_sign(mut c: DVector<f64>, mu0: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = c.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateShape("contrast vanishes".into()));
    }
    c /= norm;
    if c.dot(mu0) < 0.0 {
        c.neg_mut();
    }
    Ok(c)
}

/// Contrast maximizing `c'μ⁰ / sqrt(c'Sc)` subject to `c'1 = 0`, with unit norm and `c'μ⁰ > 0`.
pub fn optimal_contrast(mu0: &DVector<f64>, s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = mu0.len();
    if s.nrows() != k || s.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "shape has length {k} but covariance is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if k < 2 {
        return Err(Error::InvalidDesign("contrasts need at least two doses".into()));
    }
    check_shape(mu0)?;
    let chol = cholesky(s, "covariance")?;
    let ones = DVector::from_element(k, 1.0);
    let s_inv_mu = chol.solve(mu0);
    let s_inv_one = chol.solve(&ones);
    let weight = ones.dot(&s_inv_mu) / ones.dot(&s_inv_one);
    let mut c = s_inv_mu - s_inv_one * weight;
    // remove rounding drift off the zero-sum hyperplane
    let mean = c.mean();
    c.add_scalar_mut(-mean);
    normalize_with_sign(c, mu0)
}

/// Optimal weights for placebo-adjusted estimates: `d ∝ S_C⁻¹ μ⁰_C`, no zero-sum constraint.
pub fn optimal_contrast_placebo_adjusted(
    mu0_c: &DVector<f64>,
    s_c: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = mu0_c.len();
    if s_c.nrows() != k || s_c.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "shape has length {k} but covariance is {}x{}",
            s_c.nrows(),
            s_c.ncols()
        )));
    }
    if !(mu0_c.amax() > 1e-12) {
        return Err(Error::DegenerateShape(
            "placebo-adjusted shape is identically zero".into(),
        ));
    }
    let chol = cholesky(s_c, "covariance")?;
    normalize_with_sign(chol.solve(mu0_c), mu0_c)
}

/// Optimal contrast matrix for a list of candidates; placebo-adjusted designs
/// use the unconstrained weights.
pub fn contrast_matrix(
    models: &[CandidateModel],
    design: &DoseDesign,
    s: &DMatrix<f64>,
) -> Result<ContrastMatrix> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no candidate models".into()));
    }
    let k = design.len();
    if s.nrows() != k || s.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "design has {k} doses but covariance is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let mut matrix = DMatrix::zeros(k, models.len());
    for (m, model) in models.iter().enumerate() {
        model.validate_for_design(design)?;
        let mu0 = DVector::from_vec(shape_vector(model, design));
        let c = if design.is_placebo_adjusted() {
            optimal_contrast_placebo_adjusted(&mu0, s)
        } else {
            optimal_contrast(&mu0, s)
        }
        .map_err(|e| match e {
            Error::DegenerateShape(msg) => {
                Error::DegenerateShape(format!("{}: {msg}", model.label()))
            }
            other => other,
        })?;
        matrix.set_column(m, &c);
    }
    Ok(ContrastMatrix {
        labels: models.iter().map(CandidateModel::label).collect(),
        matrix,
        placebo_adjusted: design.is_placebo_adjusted(),
    })
}

/// Noncentrality `c'μ / sqrt(c'Sc)` of a contrast under mean `μ`.
pub fn noncentrality(c: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    c.dot(mu) / (c.transpose() * s * c)[(0, 0)].sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drmodels::ModelFamily;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_covariance_centers_shape() {
        let mu0 = DVector::from_vec(vec![0.0, 0.4739, 0.7299, 0.9001, 0.9643]);
        let s = DMatrix::identity(5, 5) * 0.3;
        let c = optimal_contrast(&mu0, &s).unwrap();
        let mut centered = mu0.add_scalar(-mu0.mean());
        centered /= centered.norm();
        assert!((c - centered).amax() < 1e-12);
    }

    #[test]
    fn two_doses_give_simple_difference() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
        let c = optimal_contrast(&DVector::from_vec(vec![0.0, 5.0]), &s).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(c[0], -r, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], r, epsilon = 1e-12);
    }

    #[test]
    fn constant_shape_and_singular_cov_rejected() {
        let s = DMatrix::identity(3, 3);
        assert!(matches!(
            optimal_contrast(&DVector::from_element(3, 2.0), &s),
            Err(Error::DegenerateShape(_))
        ));
        let singular = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(
            optimal_contrast(&DVector::from_vec(vec![0.0, 1.0, 2.0]), &singular),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn placebo_adjusted_examples() {
        let mu = DVector::from_vec(vec![0.2, 0.5, 0.9]);
        let d = optimal_contrast_placebo_adjusted(&mu, &DMatrix::identity(3, 3)).unwrap();
        assert!((d - mu.normalize()).amax() < 1e-12);

        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let d = optimal_contrast_placebo_adjusted(&DVector::from_vec(vec![1.0, 1.0]), &s).unwrap();
        let expected = DVector::from_vec(vec![0.5, 2.0]).normalize();
        assert!((d - expected).amax() < 1e-12);
    }

    #[test]
    fn matrix_columns_follow_models() {
        let design = DoseDesign::new(vec![0.0, 1.0, 3.0, 10.0, 30.0]).unwrap();
        let emax = CandidateModel::new(ModelFamily::Emax, vec![1.11]).unwrap();
        let models = vec![emax.clone(), emax];
        let s = DMatrix::identity(5, 5);
        let cm = contrast_matrix(&models, &design, &s).unwrap();
        assert_eq!(cm.column(0), cm.column(1));
        let scaled = contrast_matrix(&models, &design, &(s * 5.0)).unwrap();
        assert!((cm.matrix - scaled.matrix).amax() < 1e-14);
    }
}
