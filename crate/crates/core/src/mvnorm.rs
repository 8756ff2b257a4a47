//! Multivariate normal rectangle probabilities by randomized quasi-Monte Carlo,
//! equicoordinate critical values and multiplicity-adjusted p-values.
//!
//! Probabilities `P(Z <= b)` for `Z ~ N(0, R)` use the separation-of-variables
//! transform with Genz–Bretz variable prioritization, integrated on randomly
//! shifted rank-1 lattices (Richtmyer generators, baker's transform and
//! antithetic pairs). The error estimate is the standard error across shifts.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{brent_root, dnorm, pnorm, qnorm};

/// Correlation matrix: symmetric, unit diagonal, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix(DMatrix<f64>);

impl CorrMatrix {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        let m = r.nrows();
        if m == 0 || r.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix must be square and nonempty, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        for i in 0..m {
            if (r[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "correlation diagonal entry {i} is {}",
                    r[(i, i)]
                )));
            }
            for j in 0..i {
                if (r[(i, j)] - r[(j, i)]).abs() > 1e-10 || r[(i, j)].abs() > 1.0 + 1e-10 {
                    return Err(Error::InvalidParameter(format!(
                        "invalid correlation entry at ({i}, {j})"
                    )));
                }
            }
        }
        let min_eig = SymmetricEigen::new(r.clone()).eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::NotPositiveDefinite(format!(
                "correlation matrix has eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self(r))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    /// Equicorrelation matrix with off-diagonal `rho`.
    pub fn equicorrelated(m: usize, rho: f64) -> Result<Self> {
        let mut r = DMatrix::from_element(m, m, rho);
        r.fill_diagonal(1.0);
        Self::new(r)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Standardize a covariance matrix: `R_ij = V_ij / sqrt(V_ii V_jj)`.
pub fn corr_from_cov(v: &DMatrix<f64>) -> Result<CorrMatrix> {
    let m = v.nrows();
    if v.ncols() != m {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    if let Some(i) = (0..m).find(|&i| !(v[(i, i)] > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "covariance diagonal entry {i} is not positive"
        )));
    }
    let sd: Vec<f64> = (0..m).map(|i| v[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(m, m, |i, j| v[(i, j)] / (sd[i] * sd[j]));
    r.fill_diagonal(1.0);
    for i in 0..m {
        for j in 0..i {
            let x = (0.5 * (r[(i, j)] + r[(j, i)])).clamp(-1.0, 1.0);
            r[(i, j)] = x;
            r[(j, i)] = x;
        }
    }
    CorrMatrix::new(r)
}

/// Randomized QMC settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcConfig {
    /// Integrand evaluations per randomized shift (lattice points times two antithetic partners).
    pub points: usize,
    pub shifts: usize,
    pub seed: u64,
    /// Target absolute standard error across shifts; missing it is reported, not fatal.
    pub target_error: f64,
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self {
            points: 8192,
            shifts: 12,
            seed: 20_140_101,
            target_error: 1e-5,
        }
    }
}

impl QmcConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 64 || self.shifts < 8 || !(self.target_error > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "QMC needs points >= 64, shifts >= 8 and target error > 0 (got {}, {}, {})",
                self.points, self.shifts, self.target_error
            )));
        }
        Ok(())
    }
}

/// Probability with its QMC standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnProbability {
    pub value: f64,
    pub error: f64,
    /// False when the standard error exceeds the configured target.
    pub accuracy_reached: bool,
}

impl MvnProbability {
    fn exact(value: f64) -> Self {
        Self {
            value,
            error: 0.0,
            accuracy_reached: true,
        }
    }
}

/// Reduced integration problem: merged limits and a (possibly singular)
/// lower-triangular factor in prioritized order.
struct Reduced {
    upper: Vec<f64>,
    /// Row-major lower triangle; `chol[i][i] == 0` marks a deterministic coordinate.
    chol: Vec<Vec<f64>>,
}

const PIVOT_TOL: f64 = 1e-10;

fn reduce(upper: &[f64], r: &DMatrix<f64>) -> Option<Reduced> {
    // drop coordinates with infinite upper limits and merge perfectly correlated ones
    let mut keep: Vec<usize> = Vec::new();
    let mut limits: Vec<f64> = Vec::new();
    for (i, &b) in upper.iter().enumerate() {
        if b == f64::INFINITY {
            continue;
        }
        if let Some(pos) = keep.iter().position(|&j| r[(i, j)] >= 1.0 - 1e-12) {
            limits[pos] = limits[pos].min(b);
        } else {
            keep.push(i);
            limits.push(b);
        }
    }
    let m = keep.len();
    if m == 0 {
        return None;
    }
    let sub = |a: usize, b: usize| r[(keep[a], keep[b])];
    // label-free tie-break so that relabelling the coordinates does not change the pivot sequence
    let keys: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut row: Vec<f64> = (0..m).filter(|&k| k != j).map(|k| sub(j, k)).collect();
            row.sort_by(|a, b| b.total_cmp(a));
            row
        })
        .collect();
    let precedes = |a: (usize, f64), b: (usize, f64)| {
        let scale = 1e-13 * a.1.max(b.1);
        if (a.1 - b.1).abs() > scale {
            return a.1 < b.1;
        }
        keys[a.0]
            .iter()
            .zip(&keys[b.0])
            .find(|(x, y)| (*x - *y).abs() > 1e-13)
            .is_some_and(|(x, y)| x > y)
    };

    // Genz–Bretz prioritization: at each step pick the variable with the
    // smallest conditional probability given expected values of earlier ones.
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; m]; m];
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut order = Vec::with_capacity(m);
    let mut y = vec![0.0; m];
    for step in 0..m {
        let mut best: Option<(usize, f64, f64, usize)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            let ss: f64 = (0..step).map(|k| rows[j][k] * rows[j][k]).sum();
            let var = (sub(j, j) - ss).max(0.0);
            let shift: f64 = (0..step).map(|k| rows[j][k] * y[k]).sum();
            let p = if var > PIVOT_TOL {
                pnorm((limits[j] - shift) / var.sqrt())
            } else if limits[j] >= shift {
                1.0
            } else {
                0.0
            };
            if best.is_none_or(|(_, bp, _, bj)| precedes((j, p), (bj, bp))) {
                best = Some((pos, p, var, j));
            }
        }
        let (pos, _, var, _) = best.expect("remaining is nonempty");
        let pivot = remaining.remove(pos);
        order.push(pivot);
        let diag = if var > PIVOT_TOL { var.sqrt() } else { 0.0 };
        rows[pivot][step] = diag;
        for &j in &remaining {
            rows[j][step] = if diag > 0.0 {
                let dot: f64 = (0..step).map(|k| rows[j][k] * rows[pivot][k]).sum();
                (sub(j, pivot) - dot) / diag
            } else {
                0.0
            };
        }
        let shift: f64 = (0..step).map(|k| rows[pivot][k] * y[k]).sum();
        y[step] = if diag > 0.0 {
            let u = (limits[pivot] - shift) / diag;
            let cdf = pnorm(u);
            if cdf > 1e-300 {
                -dnorm(u) / cdf
            } else {
                u
            }
        } else {
            0.0
        };
    }
    Some(Reduced {
        upper: order.iter().map(|&j| limits[j]).collect(),
        chol: order
            .iter()
            .enumerate()
            .map(|(i, &j)| rows[j][..=i].to_vec())
            .collect(),
    })
}

impl Reduced {
    fn dim(&self) -> usize {
        self.upper.len()
    }

    /// Separation-of-variables integrand at `w` in `[0,1]^(m-1)`.
    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let m = self.dim();
        let mut value = 1.0;
        for i in 0..m {
            let row = &self.chol[i];
            let shift: f64 = row[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            let diag = row[i];
            if diag > 0.0 {
                let e = pnorm((self.upper[i] - shift) / diag);
                value *= e;
                if value == 0.0 {
                    return 0.0;
                }
                if i + 1 < m {
                    y[i] = qnorm((w[i] * e).max(1e-300)).clamp(-40.0, 40.0);
                }
            } else {
                if shift > self.upper[i] {
                    return 0.0;
                }
                y[i] = 0.0;
            }
        }
        value
    }
}

const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

fn shift_estimate(red: &Reduced, generator: &[f64], shift: &[f64], pairs: usize) -> f64 {
    let d = generator.len();
    let mut w = vec![0.0; d];
    let mut w_anti = vec![0.0; d];
    let mut y = vec![0.0; red.dim()];
    let mut total = 0.0;
    for k in 1..=pairs {
        for j in 0..d {
            let x = (k as f64 * generator[j] + shift[j]).fract();
            let baker = (2.0 * x - 1.0).abs();
            w[j] = baker;
            w_anti[j] = 1.0 - baker;
        }
        total += 0.5 * (red.integrand(&w, &mut y) + red.integrand(&w_anti, &mut y));
    }
    total / pairs as f64
}

fn integrate(red: &Reduced, cfg: &QmcConfig) -> MvnProbability {
    let m = red.dim();
    if m == 1 {
        return MvnProbability::exact(if red.chol[0][0] > 0.0 {
            pnorm(red.upper[0] / red.chol[0][0])
        } else if red.upper[0] >= 0.0 {
            1.0
        } else {
            0.0
        });
    }
    let d = m - 1;
    let generator: Vec<f64> = PRIMES[..d].iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shifts: Vec<Vec<f64>> = (0..cfg.shifts)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();

    let pairs = (cfg.points / 2).max(1);
    let estimates: Vec<f64> = shifts
        .par_iter()
        .map(|shift| shift_estimate(red, &generator, shift, pairs))
        .collect();
    let s = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / s;
    let var = estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
    let error = (var / s).sqrt();
    MvnProbability {
        value: mean.clamp(0.0, 1.0),
        error,
        accuracy_reached: error <= cfg.target_error,
    }
}

/// `P(Z <= upper)` for `Z ~ N(0, R)`.
pub fn mvn_rect(upper: &[f64], r: &CorrMatrix, cfg: &QmcConfig) -> Result<MvnProbability> {
    cfg.validate()?;
    if upper.len() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} limits for a {}-dimensional distribution",
            upper.len(),
            r.dim()
        )));
    }
    if upper.iter().any(|b| b.is_nan()) {
        return Err(Error::InvalidParameter("upper limit is NaN".into()));
    }
    if upper.contains(&f64::NEG_INFINITY) {
        return Ok(MvnProbability::exact(0.0));
    }
    match reduce(upper, r.matrix()) {
        None => Ok(MvnProbability::exact(1.0)),
        Some(red) => Ok(integrate(&red, cfg)),
    }
}

/// `P(Z <= q 1)`.
pub fn mvn_equicoordinate(q: f64, r: &CorrMatrix, cfg: &QmcConfig) -> Result<MvnProbability> {
    mvn_rect(&vec![q; r.dim()], r, cfg)
}

/// Equicoordinate critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub value: f64,
    pub accuracy_reached: bool,
}

/// One-sided critical value `q` with `P(max Z <= q) = 1 - alpha`.
pub fn critical_value(r: &CorrMatrix, alpha: f64, cfg: &QmcConfig) -> Result<CriticalValue> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 0.5), got {alpha}")));
    }
    cfg.validate()?;
    let m = r.dim();
    let lo = qnorm(1.0 - alpha);
    if m == 1 {
        return Ok(CriticalValue {
            value: lo,
            accuracy_reached: true,
        });
    }
    let mut reached = true;
    let mut g = |q: f64| -> f64 {
        match mvn_equicoordinate(q, r, cfg) {
            Ok(p) => {
                reached &= p.accuracy_reached;
                p.value - (1.0 - alpha)
            }
            Err(_) => f64::NAN,
        }
    };
    let g_lo = g(lo);
    if g_lo >= 0.0 {
        // all coordinates perfectly correlated
        return Ok(CriticalValue {
            value: lo,
            accuracy_reached: reached,
        });
    }
    let mut hi = qnorm(1.0 - alpha / m as f64);
    let mut widen = 0;
    while g(hi) < 0.0 {
        hi += 0.05;
        widen += 1;
        if widen > 40 {
            return Err(Error::NonConvergence("critical value bracket".into()));
        }
    }
    let value = brent_root(&mut g, lo, hi, 1e-5, 100)?;
    Ok(CriticalValue {
        value,
        accuracy_reached: reached,
    })
}

/// Adjusted p-values `p_m = 1 - P(Z <= z_m 1)`.
pub fn adjusted_pvalues(z: &[f64], r: &CorrMatrix, cfg: &QmcConfig) -> Result<Vec<f64>> {
    if z.len() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} statistics for a {}-dimensional distribution",
            z.len(),
            r.dim()
        )));
    }
    z.iter()
        .map(|&zm| {
            if zm.is_nan() {
                return Err(Error::InvalidParameter("statistic is NaN".into()));
            }
            let p = mvn_equicoordinate(zm, r, cfg)?;
            Ok((1.0 - p.value).clamp(0.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn corr_examples() {
        let v = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]);
        let r = corr_from_cov(&v).unwrap();
        assert_eq!(r.matrix()[(0, 1)], 0.5);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.2, 9.0]));
        assert_eq!(corr_from_cov(&diag).unwrap().matrix(), &DMatrix::identity(3, 3));
        let mut cs = DMatrix::from_element(4, 4, 0.0094);
        cs.fill_diagonal(0.149);
        assert_abs_diff_eq!(corr_from_cov(&cs).unwrap().matrix()[(2, 3)], 0.0631, epsilon = 1e-4);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(corr_from_cov(&bad).is_err());
    }

    #[test]
    fn univariate_and_independent() {
        let cfg = QmcConfig::default();
        let p = mvn_rect(&[1.6448536269514722], &CorrMatrix::identity(1), &cfg).unwrap();
        assert_abs_diff_eq!(p.value, 0.95, epsilon = 1e-12);
        let q = qnorm(0.975f64.powf(0.25));
        let p = mvn_equicoordinate(q, &CorrMatrix::identity(4), &cfg).unwrap();
        assert_abs_diff_eq!(p.value, 0.975, epsilon = 1e-6);
    }

    #[test]
    fn bivariate_orthant() {
        let r = CorrMatrix::equicorrelated(2, 0.5).unwrap();
        let p = mvn_rect(&[0.0, 0.0], &r, &QmcConfig::default()).unwrap();
        assert_abs_diff_eq!(p.value, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn infinite_limits() {
        let r = CorrMatrix::equicorrelated(3, 0.3).unwrap();
        let cfg = QmcConfig::default();
        assert_eq!(mvn_rect(&[f64::NEG_INFINITY, 1.0, 1.0], &r, &cfg).unwrap().value, 0.0);
        assert_eq!(mvn_equicoordinate(f64::INFINITY, &r, &cfg).unwrap().value, 1.0);
        let p = mvn_rect(&[f64::INFINITY, f64::INFINITY, 0.5], &r, &cfg).unwrap();
        assert_abs_diff_eq!(p.value, pnorm(0.5), epsilon = 1e-14);
    }

    #[test]
    fn duplicate_coordinates_are_merged() {
        let mut m = DMatrix::from_element(3, 3, 0.4);
        m.fill_diagonal(1.0);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        // rows 0 and 1 identical → PSD singular
        m[(1, 2)] = 0.4;
        m[(2, 1)] = 0.4;
        let r = CorrMatrix::new(m).unwrap();
        let two = CorrMatrix::equicorrelated(2, 0.4).unwrap();
        let cfg = QmcConfig::default();
        let a = mvn_rect(&[1.0, 0.7, 1.2], &r, &cfg).unwrap().value;
        let b = mvn_rect(&[0.7, 1.2], &two, &cfg).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn singular_beyond_duplicates() {
        // Z3 = (Z1 + Z2)/sqrt(2) with Z1, Z2 independent
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, s, 0.0, 1.0, s, s, s, 1.0]);
        let r = CorrMatrix::new(m).unwrap();
        let p = mvn_rect(&[0.0, 0.0, 0.0], &r, &QmcConfig::default()).unwrap();
        // P(Z1<=0, Z2<=0) = 1/4 implies Z3 <= 0 already
        assert_abs_diff_eq!(p.value, 0.25, epsilon = 2e-4);
    }

    #[test]
    fn critical_values() {
        let cfg = QmcConfig::default();
        let q1 = critical_value(&CorrMatrix::identity(1), 0.025, &cfg).unwrap();
        assert_abs_diff_eq!(q1.value, qnorm(0.975), epsilon = 1e-12);
        let q4 = critical_value(&CorrMatrix::identity(4), 0.025, &cfg).unwrap();
        assert_abs_diff_eq!(q4.value, qnorm(0.975f64.powf(0.25)), epsilon = 1e-4);
        assert!(critical_value(&CorrMatrix::identity(2), 0.6, &cfg).is_err());
    }

    #[test]
    fn adjusted_pvalue_examples() {
        let cfg = QmcConfig::default();
        let r = CorrMatrix::identity(2);
        let p = adjusted_pvalues(&[1.6448536269514722, f64::NEG_INFINITY], &r, &cfg).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 - 0.95 * 0.95, epsilon = 1e-6);
        assert_eq!(p[1], 1.0);
        let p = adjusted_pvalues(&[f64::INFINITY, 0.0], &r, &cfg).unwrap();
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let r = CorrMatrix::equicorrelated(5, 0.35).unwrap();
        let cfg = QmcConfig::default().with_seed(99);
        let a = mvn_equicoordinate(2.1, &r, &cfg).unwrap();
        let b = mvn_equicoordinate(2.1, &r, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}
