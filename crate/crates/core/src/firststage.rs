//! First-stage estimators: per-dose ANOVA-type fits producing `(μ̂, Ŝ)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::drmodels::DoseDesign;
use crate::error::{Error, Result};
use crate::mcptest::AnovaEstimate;
use crate::numeric::trigamma;

/// One subject's response at a dose (normal or count endpoints).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dose: f64,
    pub resp: f64,
}

/// Aggregated binary outcomes at a dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialCount {
    pub dose: f64,
    pub successes: u64,
    pub trials: u64,
}

/// Right-censored event time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub dose: f64,
    pub time: f64,
    pub event: bool,
}

/// Subject-level data for one of the supported endpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum SubjectData {
    Normal(Vec<Observation>),
    Binary(Vec<BinomialCount>),
    Count(Vec<Observation>),
    TimeToEvent(Vec<SurvivalRecord>),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FirstStageOptions {
    /// Add one half to both cells of a dose group with 0% or 100% responders.
    pub haldane: bool,
}

/// Fit the ANOVA-type first stage matching the data's endpoint.
pub fn estimate(data: &SubjectData, opts: FirstStageOptions) -> Result<AnovaEstimate> {
    match data {
        SubjectData::Normal(rows) => anova_normal(rows),
        SubjectData::Binary(rows) => logistic_saturated(rows, opts.haldane),
        SubjectData::Count(rows) => negbin_saturated(rows),
        SubjectData::TimeToEvent(rows) => coxph_factor(rows),
    }
}

fn check_dose(d: f64) -> Result<()> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::InvalidData(format!("dose must be finite and nonnegative, got {d}")));
    }
    Ok(())
}

/// Group values by dose in increasing dose order.
fn group_by_dose<T, F>(rows: &[T], key: F) -> Result<Vec<(f64, Vec<&T>)>>
where
    F: Fn(&T) -> f64,
{
    if rows.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    let mut groups: BTreeMap<u64, (f64, Vec<&T>)> = BTreeMap::new();
    for r in rows {
        let d = key(r);
        check_dose(d)?;
        // nonnegative floats order like their bit patterns
        groups.entry(d.to_bits()).or_insert_with(|| (d, Vec::new())).1.push(r);
    }
    Ok(groups.into_values().collect())
}

fn design_with_placebo(doses: Vec<f64>) -> Result<DoseDesign> {
    if doses.first() != Some(&0.0) {
        return Err(Error::InvalidData("data must contain a placebo (dose 0) group".into()));
    }
    DoseDesign::new(doses)
}

/// Group means with a pooled-variance diagonal covariance.
pub fn anova_normal(rows: &[Observation]) -> Result<AnovaEstimate> {
    let groups = group_by_dose(rows, |o| o.dose)?;
    let mut means = Vec::with_capacity(groups.len());
    let mut sizes = Vec::with_capacity(groups.len());
    let mut ss = 0.0;
    for (d, g) in &groups {
        if g.len() < 2 {
            return Err(Error::InvalidData(format!(
                "dose {d} has {} observation(s); at least 2 are needed",
                g.len()
            )));
        }
        if g.iter().any(|o| !o.resp.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at dose {d}")));
        }
        let n = g.len() as f64;
        let m = g.iter().map(|o| o.resp).sum::<f64>() / n;
        ss += g.iter().map(|o| (o.resp - m).powi(2)).sum::<f64>();
        means.push(m);
        sizes.push(n);
    }
    let df = rows.len() - groups.len();
    let s2 = ss / df as f64;
    let design = design_with_placebo(groups.iter().map(|g| g.0).collect())?;
    let cov = DMatrix::from_diagonal(&DVector::from_iterator(
        sizes.len(),
        sizes.iter().map(|n| s2 / n),
    ));
    AnovaEstimate::new(design, DVector::from_vec(means), cov)
}

/// Saturated logistic regression with dose as a factor, in closed form:
/// `μ̂ = logit(p̂)` and `Var = 1 / (n p̂ (1 - p̂))` per dose.
pub fn logistic_saturated(rows: &[BinomialCount], haldane: bool) -> Result<AnovaEstimate> {
    let groups = group_by_dose(rows, |r| r.dose)?;
    let mut mu = Vec::with_capacity(groups.len());
    let mut var = Vec::with_capacity(groups.len());
    for (d, g) in &groups {
        let (mut s, mut n) = (0u64, 0u64);
        for r in g {
            if r.successes > r.trials {
                return Err(Error::InvalidData(format!(
                    "dose {d}: {} successes out of {} trials",
                    r.successes, r.trials
                )));
            }
            s += r.successes;
            n += r.trials;
        }
        let (mut s, mut n) = (s as f64, n as f64);
        if s == 0.0 || s == n {
            if !haldane || n == 0.0 {
                return Err(Error::InvalidData(format!(
                    "dose {d} has a boundary proportion {s}/{n}; enable the continuity correction"
                )));
            }
            s += 0.5;
            n += 1.0;
        }
        let f = n - s;
        mu.push((s / f).ln());
        var.push(n / (s * f));
    }
    let design = design_with_placebo(groups.iter().map(|g| g.0).collect())?;
    AnovaEstimate::new(
        design,
        DVector::from_vec(mu),
        DMatrix::from_diagonal(&DVector::from_vec(var)),
    )
}

/// Joint maximum-likelihood fit of a negative binomial model with one log-mean per group
/// and a common overdispersion `k` (variance `m + m²/k`).
#[derive(Debug, Clone, PartialEq)]
pub struct NegBinFit {
    pub log_means: Vec<f64>,
    pub log_k: f64,
    /// Inverse observed information restricted to the log-mean block.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

/// `log k` is capped here; data with no overdispersion drive `k` to infinity.
const MAX_LOG_K: f64 = 25.0;
const MIN_LOG_K: f64 = -25.0;
/// Above this count the digamma differences use the special functions instead of sums.
const SUM_LIMIT: u64 = 10_000;

/// `(ln Γ(y+k) - ln Γ(k), ψ(y+k) - ψ(k), ψ'(y+k) - ψ'(k))`.
fn gamma_differences(y: u64, k: f64) -> (f64, f64, f64) {
    if y <= SUM_LIMIT {
        let (mut l, mut d, mut t) = (0.0, 0.0, 0.0);
        for j in 0..y {
            let v = k + j as f64;
            l += v.ln();
            d += 1.0 / v;
            t -= 1.0 / (v * v);
        }
        (l, d, t)
    } else {
        let yk = y as f64 + k;
        (
            ln_gamma(yk) - ln_gamma(k),
            digamma(yk) - digamma(k),
            trigamma(yk) - trigamma(k),
        )
    }
}

struct NbState {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn nb_evaluate(groups: &[Vec<u64>], beta: &[f64], log_k: f64) -> NbState {
    let g = groups.len();
    let k = log_k.exp();
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(g + 1);
    let mut hess = DMatrix::zeros(g + 1, g + 1);
    for (i, ys) in groups.iter().enumerate() {
        let m = beta[i].exp();
        let km = k + m;
        let log_ratio = (k / km).ln();
        for &y in ys {
            let yf = y as f64;
            let (lg, dg, tg) = gamma_differences(y, k);
            loglik += lg + k * log_ratio + yf * (m / km).ln() - ln_gamma(yf + 1.0);
            // derivatives in beta_i
            grad[i] += k * (yf - m) / km;
            hess[(i, i)] -= k * m * (k + yf) / (km * km);
            // derivatives in k, chained to log k
            let dk = dg + log_ratio + 1.0 - (yf + k) / km;
            let dkk = tg + 1.0 / k - 2.0 / km + (yf + k) / (km * km);
            let dbk = m * (yf - m) / (km * km);
            grad[g] += k * dk;
            hess[(g, g)] += k * dk + k * k * dkk;
            hess[(i, g)] += k * dbk;
        }
        hess[(g, i)] = hess[(i, g)];
    }
    NbState { loglik, grad, hess }
}

/// Fit the negative binomial model to count groups by damped Newton iteration.
pub fn negbin_fit_groups(groups: &[Vec<u64>]) -> Result<NegBinFit> {
    if groups.is_empty() {
        return Err(Error::EmptyInput("no count groups".into()));
    }
    let mut beta = Vec::with_capacity(groups.len());
    for (i, ys) in groups.iter().enumerate() {
        if ys.len() < 2 {
            return Err(Error::InvalidData(format!("group {i} has fewer than 2 subjects")));
        }
        let total: u64 = ys.iter().sum();
        if total == 0 {
            return Err(Error::InvalidData(format!("group {i} has only zero counts")));
        }
        beta.push((total as f64 / ys.len() as f64).ln());
    }
    // method-of-moments start for k
    let mut excess = 0.0;
    let mut m2 = 0.0;
    for (ys, b) in groups.iter().zip(&beta) {
        let m = b.exp();
        for &y in ys {
            excess += (y as f64 - m).powi(2) - m;
            m2 += m * m;
        }
    }
    let mut log_k = if excess > 0.0 { (m2 / excess).ln() } else { MAX_LOG_K };
    log_k = log_k.clamp(MIN_LOG_K, MAX_LOG_K);

    let g = groups.len();
    let mut state = nb_evaluate(groups, &beta, log_k);
    let mut iterations = 0;
    loop {
        let at_cap = log_k >= MAX_LOG_K && state.grad[g] >= 0.0;
        let free = if at_cap { g } else { g + 1 };
        let gnorm = state.grad.rows(0, free).norm();
        if gnorm <= 1e-8 * (1.0 + state.loglik.abs()).max(1.0) {
            break;
        }
        if iterations >= 100 {
            return Err(Error::NonConvergence(format!(
                "negative binomial fit after 100 iterations (gradient norm {gnorm:.2e})"
            )));
        }
        iterations += 1;
        let h = -state.hess.view((0, 0), (free, free)).clone_owned();
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&state.grad.rows(0, free).clone_owned()),
            // fall back to gradient ascent scaled by the diagonal
            None => DVector::from_fn(free, |i, _| state.grad[i] / h[(i, i)].abs().max(1.0)),
        };
        let mut t = 1.0;
        loop {
            let nb: Vec<f64> = (0..g).map(|i| beta[i] + t * step[i]).collect();
            let nk = if free > g {
                (log_k + t * step[g]).clamp(MIN_LOG_K, MAX_LOG_K)
            } else {
                log_k
            };
            let trial = nb_evaluate(groups, &nb, nk);
            if trial.loglik >= state.loglik - 1e-12 * state.loglik.abs() {
                beta = nb;
                log_k = nk;
                state = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::NonConvergence("negative binomial line search".into()));
            }
        }
    }
    // inverse observed information, then the log-mean block
    let info = -state.hess.clone();
    let at_cap = log_k >= MAX_LOG_K;
    let cov = if at_cap {
        info.view((0, 0), (g, g)).clone_owned().try_inverse()
    } else {
        info.try_inverse().map(|inv| inv.view((0, 0), (g, g)).clone_owned())
    }
    .ok_or_else(|| Error::Singular("negative binomial information matrix".into()))?;
    Ok(NegBinFit {
        log_means: beta,
        log_k,
        cov,
        iterations,
    })
}

/// Per-dose log means with a common overdispersion, from subject-level counts.
pub fn negbin_saturated(rows: &[Observation]) -> Result<AnovaEstimate> {
    let grouped = group_by_dose(rows, |o| o.dose)?;
    let mut groups = Vec::with_capacity(grouped.len());
    for (d, g) in &grouped {
        let mut ys = Vec::with_capacity(g.len());
        for o in g {
            if !(o.resp >= 0.0 && o.resp.fract() == 0.0 && o.resp.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "count response at dose {d} must be a nonnegative integer, got {}",
                    o.resp
                )));
            }
            ys.push(o.resp as u64);
        }
        groups.push(ys);
    }
    let fit = negbin_fit_groups(&groups).map_err(|e| match e {
        Error::InvalidData(msg) => {
            // report the dose rather than the group index
            let idx: Option<usize> = msg
                .strip_prefix("group ")
                .and_then(|r| r.split_whitespace().next())
                .and_then(|v| v.parse().ok());
            match idx {
                Some(i) => Error::InvalidData(msg.replacen(
                    &format!("group {i}"),
                    &format!("dose {}", grouped[i].0),
                    1,
                )),
                None => Error::InvalidData(msg),
            }
        }
        other => other,
    })?;
    let design = design_with_placebo(grouped.iter().map(|g| g.0).collect())?;
    let mut cov = fit.cov;
    crate::linalg::symmetrize(&mut cov);
    AnovaEstimate::new(design, DVector::from_vec(fit.log_means), cov)
}

/// Cox proportional hazards fit with dose as a factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    /// Log hazard ratios of the active doses versus placebo.
    pub log_hr: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    /// Partial log-likelihood at the start and after every accepted Newton step.
    pub loglik_path: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

struct CoxData {
    /// Distinct event times in decreasing order with at-risk additions.
    /// Each entry: group index and whether the record is an event.
    records: Vec<(f64, usize, bool)>,
    groups: usize,
}

/// Breslow partial log-likelihood, gradient and Hessian for active-group effects.
fn cox_evaluate(data: &CoxData, beta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = data.groups - 1;
    let weight = |g: usize| if g == 0 { 1.0 } else { beta[g - 1].exp() };
    let w: Vec<f64> = (0..data.groups).map(weight).collect();
    let mut at_risk = vec![0.0; data.groups];
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let recs = &data.records;
    let mut i = 0;
    // records sorted by decreasing time; sweep tied blocks
    while i < recs.len() {
        let t = recs[i].0;
        let mut j = i;
        let mut events = vec![0.0; data.groups];
        while j < recs.len() && recs[j].0 == t {
            let (_, g, ev) = recs[j];
            at_risk[g] += 1.0;
            if ev {
                events[g] += 1.0;
            }
            j += 1;
        }
        let d: f64 = events.iter().sum();
        if d > 0.0 {
            let s0: f64 = (0..data.groups).map(|g| at_risk[g] * w[g]).sum();
            for g in 1..data.groups {
                if events[g] > 0.0 {
                    loglik += events[g] * beta[g - 1];
                }
            }
            loglik -= d * s0.ln();
            let probs: Vec<f64> = (1..data.groups).map(|g| at_risk[g] * w[g] / s0).collect();
            for a in 0..p {
                grad[a] += events[a + 1] - d * probs[a];
                hess[(a, a)] -= d * probs[a];
                for b in 0..p {
                    hess[(a, b)] += d * probs[a] * probs[b];
                }
            }
        }
        i = j;
    }
    (loglik, grad, hess)
}

/// Newton–Raphson with step halving on the Breslow partial likelihood.
pub fn coxph_fit(rows: &[SurvivalRecord]) -> Result<(Vec<f64>, CoxFit)> {
    let grouped = group_by_dose(rows, |r| r.dose)?;
    if grouped[0].0 != 0.0 {
        return Err(Error::InvalidData("data must contain a placebo (dose 0) group".into()));
    }
    if grouped.len() < 2 {
        return Err(Error::InvalidData("need at least one active dose group".into()));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (gi, (d, g)) in grouped.iter().enumerate() {
        let mut events = 0;
        for r in g {
            if !(r.time > 0.0 && r.time.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "event time must be positive and finite, got {} at dose {d}",
                    r.time
                )));
            }
            events += usize::from(r.event);
            records.push((r.time, gi, r.event));
        }
        if events == 0 {
            return Err(Error::MonotoneLikelihood(format!(
                "dose group {d} has no events; its hazard ratio is not estimable"
            )));
        }
    }
    records.sort_by(|a, b| b.0.total_cmp(&a.0));
    let data = CoxData {
        records,
        groups: grouped.len(),
    };
    let p = data.groups - 1;
    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut hess) = cox_evaluate(&data, &beta);
    let mut loglik_path = vec![ll];
    let mut iterations = 0;
    while grad.norm() > 1e-8 {
        if iterations >= 100 {
            return Err(Error::NonConvergence(format!(
                "Cox fit after 100 iterations (gradient norm {:.2e})",
                grad.norm()
            )));
        }
        iterations += 1;
        let info = -hess.clone();
        let step = info
            .cholesky()
            .ok_or_else(|| Error::Singular("Cox information matrix".into()))?
            .solve(&grad);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let (tll, tg, th) = cox_evaluate(&data, &trial);
            if tll >= ll - 1e-12 * ll.abs() {
                beta = trial;
                ll = tll;
                grad = tg;
                hess = th;
                loglik_path.push(ll);
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::NonConvergence("Cox line search".into()));
            }
        }
        if beta.iter().any(|b| b.abs() > 30.0) {
            return Err(Error::MonotoneLikelihood(
                "a log hazard ratio diverges; the partial likelihood is monotone".into(),
            ));
        }
    }
    let mut cov = (-hess)
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cox information matrix".into()))?;
    crate::linalg::symmetrize(&mut cov);
    let doses = grouped.iter().map(|g| g.0).collect();
    Ok((
        doses,
        CoxFit {
            log_hr: beta,
            cov,
            loglik: ll,
            loglik_path,
            iterations,
            gradient_norm: grad.norm(),
        },
    ))
}

/// Log hazard ratios versus placebo as a placebo-adjusted estimate.
pub fn coxph_factor(rows: &[SurvivalRecord]) -> Result<AnovaEstimate> {
    let (doses, fit): (Vec<f64>, CoxFit) = coxph_fit(rows)?;
    let design = DoseDesign::placebo_adjusted(doses[1..].to_vec())?;
    AnovaEstimate::new(design, DVector::from_vec(fit.log_hr), fit.cov)
}
