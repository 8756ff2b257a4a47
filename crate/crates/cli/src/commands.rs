use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use dosekit::firststage::{estimate, FirstStageOptions};
use dosekit::glsfit::{
    bootstrap, gls_fit, model_average, predict_with_ci, select_model, target_dose, target_dose_for,
    BootstrapConfig, CurvePoint, Direction, Selection, TargetDoseEstimate,
};
use dosekit::mcptest::{mct_test, reference_indices, ContrastSource, SCHEMA};
use dosekit::mvnorm::critical_value;
use dosekit::numeric::qnorm;
use dosekit::optcontrast::contrast_matrix;
use dosekit::simharness::{run_scenario, SimReport, SimScenario, StudyConfig, FULL_SAMPLE_SIZES};
use dosekit::{
    AnovaEstimate, CorrMatrix, DMatrix, DVector, DoseDesign, DosePredictor, FitBounds, FittedModel, MctResult,
    ModelSet, QmcConfig,
};
use serde::Serialize;

use crate::input::{read_cov, read_matrix, read_mu, read_subjects, read_text};
use crate::svg::{self, EstimatePoint};
use crate::{
    Cli, CliError, Command, ContrastsArgs, CritArgs, EstimateArgs, FirststageArgs, FitArgs,
    McpmodArgs, MctestArgs, QmcArgs, SelectionRule, SimulateArgs, DEFAULT_SEED,
};

type Res<T> = Result<T, CliError>;

/// Replicates per sample size of the full simulation grid.
const FULL_PAPER_REPS: usize = 2000;
const CURVE_POINTS: usize = 101;

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Res<()> {
    let ctx = Ctx {
        seed: cli.seed,
        json: cli.json,
    };
    match &cli.command {
        Command::Contrasts(a) => contrasts(a, out),
        Command::Mctest(a) => mctest(&ctx, a, out, err),
        Command::Fit(a) => fit(&ctx, a, out, err),
        Command::Mcpmod(a) => mcpmod(&ctx, a, out, err),
        Command::Firststage(a) => firststage(&ctx, a, out),
        Command::Simulate(a) => simulate(&ctx, a, out),
        Command::Crit(a) => crit(&ctx, a, out, err),
    }
}

struct Ctx {
    seed: Option<u64>,
    json: bool,
}

impl Ctx {
    fn qmc(&self, a: &QmcArgs) -> Res<QmcConfig> {
        let mut cfg = QmcConfig::default();
        if let Some(s) = a.mvn_seed.or(self.seed) {
            cfg.seed = s;
        }
        if let Some(t) = a.mvn_tol {
            cfg.target_error = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Print the table, or the JSON document with `--json`, and write `--out`.
    fn emit<T: Serialize>(&self, out: &mut dyn Write, table: &str, doc: &T, path: Option<&Path>) -> Res<()> {
        let body = Versioned { schema: SCHEMA, doc };
        let text = serde_json::to_string_pretty(&body).expect("report serializes") + "\n";
        if let Some(p) = path {
            write_file(p, &text)?;
        }
        let shown = if self.json { text.as_str() } else { table };
        out.write_all(shown.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        })
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    doc: &'a T,
}

fn write_file(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn warn(err: &mut dyn Write, msg: &str) {
    let _ = writeln!(err, "warning: {msg}");
}

fn load_models(path: &Path) -> Res<ModelSet> {
    ModelSet::from_json(&read_text(path)?).map_err(|err| CliError::InFile {
        path: path.to_path_buf(),
        err,
    })
}

/// First-stage estimate from CSV or JSON; a design without placebo is read as placebo-adjusted.
fn load_estimate(a: &EstimateArgs) -> Res<AnovaEstimate> {
    let est = match (&a.estimate, &a.mu, &a.cov) {
        (Some(p), None, None) => {
            AnovaEstimate::from_json(&read_text(p)?).map_err(|err| CliError::InFile {
                path: p.clone(),
                err,
            })?
        }
        (None, Some(mu), Some(cov)) => {
            let (doses, m) = read_mu(mu)?;
            let s = read_cov(cov, &doses)?;
            let adjusted = doses.first().is_some_and(|&d| d > 0.0);
            let design = DoseDesign::from_doses(doses, adjusted).map_err(|err| CliError::InFile {
                path: mu.clone(),
                err,
            })?;
            AnovaEstimate::new(design, m, s)?
        }
        _ => {
            return Err(CliError::Usage(
                "give the first-stage estimates as --mu and --cov, or as --estimate".into(),
            ))
        }
    };
    Ok(if a.plac_adj {
        est.to_placebo_differences()?
    } else {
        est
    })
}

/// Candidate doses must match the estimate's (placebo included).
fn check_doses(set: &ModelSet, est: &AnovaEstimate, models_path: &Path) -> Res<()> {
    let mut doses = est.design().doses().to_vec();
    if est.is_placebo_adjusted() {
        doses.insert(0, 0.0);
    }
    if set.doses != doses {
        return Err(CliError::InFile {
            path: models_path.to_path_buf(),
            err: dosekit::Error::DimensionMismatch(format!(
                "candidate doses {:?} differ from the estimate's doses {:?}",
                set.doses, doses
            )),
        });
    }
    Ok(())
}

fn contrast_source(path: Option<&Path>, est: &AnovaEstimate) -> Res<ContrastSource> {
    let Some(p) = path else {
        return Ok(ContrastSource::Observed);
    };
    let mut doses = est.design().doses().to_vec();
    if est.is_placebo_adjusted() {
        doses.insert(0, 0.0);
    }
    let s = read_cov(p, &doses)?;
    Ok(ContrastSource::Planned(if est.is_placebo_adjusted() {
        let zero = AnovaEstimate::new(DoseDesign::new(doses)?, DVector::zeros(s.nrows()), s)?;
        zero.to_placebo_differences()?.cov().clone()
    } else {
        s
    }))
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.4}")
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

// contrasts

fn contrasts(a: &ContrastsArgs, out: &mut dyn Write) -> Res<()> {
    let set = load_models(&a.models)?;
    let s = read_cov(&a.cov, &set.doses)?;
    let design = set.design()?;
    let full = AnovaEstimate::new(design.clone(), DVector::zeros(s.nrows()), s)?;
    let est = if a.plac_adj {
        full.to_placebo_differences()?
    } else {
        full
    };
    let cm = contrast_matrix(&set.models, est.design(), est.cov())?;
    let mut csv = String::from("dose");
    for l in &cm.labels {
        let _ = write!(csv, ",{l}");
    }
    csv.push('\n');
    for (i, d) in est.design().doses().iter().enumerate() {
        let _ = write!(csv, "{d}");
        for m in 0..cm.n_models() {
            let _ = write!(csv, ",{}", cm.matrix[(i, m)]);
        }
        csv.push('\n');
    }
    if let Some(p) = &a.plot {
        write_file(p, &svg::shapes_plot(&set.models, &design)?)?;
    }
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => out.write_all(csv.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        }),
    }
}

// mctest

#[derive(Serialize)]
struct MctDoc {
    alpha: f64,
    direction: Direction,
    placebo_adjusted: bool,
    doses: Vec<f64>,
    models: Vec<String>,
    z: Vec<f64>,
    critical: f64,
    adj_p: Vec<f64>,
    significant: Vec<bool>,
    accuracy_reached: bool,
    /// One contrast vector per model.
    contrasts: Vec<Vec<f64>>,
}

impl MctDoc {
    fn new(res: &MctResult, est: &AnovaEstimate, direction: Direction) -> Self {
        Self {
            alpha: res.alpha,
            direction,
            placebo_adjusted: est.is_placebo_adjusted(),
            doses: est.design().doses().to_vec(),
            models: res.labels.clone(),
            z: res.z.clone(),
            critical: res.critical,
            adj_p: res.adjusted_p.clone(),
            significant: res.significant.clone(),
            accuracy_reached: res.accuracy_reached,
            contrasts: (0..res.contrasts.n_models())
                .map(|m| res.contrasts.column(m).iter().copied().collect())
                .collect(),
        }
    }

    fn table(&self) -> String {
        let mut t = format!("Multiple contrast test (one-sided, alpha = {})\n\n", self.alpha);
        let w = self.models.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(t, "{:<w$}  {:>8}  {:>7}", "Model", "z", "adj-p");
        for i in 0..self.models.len() {
            let mark = if self.significant[i] { " *" } else { "" };
            let _ = writeln!(
                t,
                "{:<w$}  {:>8.3}  {:>7}{mark}",
                self.models[i],
                self.z[i],
                fmt_p(self.adj_p[i])
            );
        }
        let _ = writeln!(t, "\nCritical value: {:.3}", self.critical);
        t
    }
}

/// Run the contrast test on the estimate oriented so that benefit is positive.
fn run_test(
    ctx: &Ctx,
    est: &AnovaEstimate,
    a: &EstimateArgs,
    set: &ModelSet,
    alpha: f64,
    contrast_cov: Option<&Path>,
    qmc: &QmcArgs,
    err: &mut dyn Write,
) -> Res<MctResult> {
    let oriented = match a.direction {
        Direction::Increase => est.clone(),
        Direction::Decrease => est.negated(),
    };
    let source = contrast_source(contrast_cov, est)?;
    let res = mct_test(&oriented, &set.models, alpha, &source, &ctx.qmc(qmc)?)?;
    if !res.accuracy_reached {
        warn(err, "MVN integration did not reach its target error; see --mvn-tol");
    }
    Ok(res)
}

fn mctest(ctx: &Ctx, a: &MctestArgs, out: &mut dyn Write, err: &mut dyn Write) -> Res<()> {
    let est = load_estimate(&a.estimate)?;
    let set = load_models(&a.models)?;
    check_doses(&set, &est, &a.models)?;
    let res = run_test(ctx, &est, &a.estimate, &set, a.alpha, a.contrast_cov.as_deref(), &a.qmc, err)?;
    let doc = MctDoc::new(&res, &est, a.estimate.direction);
    ctx.emit(out, &doc.table(), &doc, a.out.as_deref())
}

// fit

#[derive(Serialize)]
struct ParamDoc {
    name: &'static str,
    estimate: f64,
    se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boot_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boot_upper: Option<f64>,
}

#[derive(Serialize)]
struct BootDoc {
    draws: usize,
    failed: usize,
    seed: u64,
    /// Quantile intervals of the curve at the design doses.
    curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct FitDoc {
    model: String,
    family: dosekit::ModelFamily,
    placebo_adjusted: bool,
    parameters: Vec<ParamDoc>,
    criterion: f64,
    gaic: f64,
    at_bound: bool,
    covariance: Option<Vec<Vec<f64>>>,
    level: f64,
    /// Fitted values with delta-method intervals at the design doses.
    predictions: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_dose: Option<TargetDoseEstimate>,
}

impl FitDoc {
    fn new(fit: &FittedModel, est: &AnovaEstimate, level: f64) -> Res<Self> {
        let (predictions, _) = predict_with_ci(fit, est, est.design().doses(), level)?;
        let parameters = fit
            .free_param_names()
            .into_iter()
            .zip(fit.free_params())
            .enumerate()
            .map(|(i, (name, &estimate))| ParamDoc {
                name,
                estimate,
                se: fit.theta_cov.as_ref().map(|c| c[(i, i)].max(0.0).sqrt()),
                boot_lower: None,
                boot_upper: None,
            })
            .collect();
        Ok(Self {
            model: fit.label.clone(),
            family: fit.family,
            placebo_adjusted: fit.placebo_adjusted,
            parameters,
            criterion: fit.criterion,
            gaic: fit.gaic,
            at_bound: fit.any_at_bound(),
            covariance: fit.theta_cov.as_ref().map(rows),
            level,
            predictions,
            bootstrap: None,
            target_dose: None,
        })
    }

    fn table(&self) -> String {
        let mut t = format!("GLS fit: {} (gAIC {:.2})\n\n", self.model, self.gaic);
        let boot = self.bootstrap.is_some();
        let _ = write!(t, "{:<10}  {:>10}  {:>9}", "Parameter", "Estimate", "Std.Err");
        if boot {
            let _ = write!(t, "  {:>10}  {:>10}", "Boot lo", "Boot hi");
        }
        t.push('\n');
        for p in &self.parameters {
            let _ = write!(t, "{:<10}  {:>10.4}  {:>9}", p.name, p.estimate, fmt_opt(p.se, 4));
            if boot {
                let _ = write!(t, "  {:>10}  {:>10}", fmt_opt(p.boot_lower, 4), fmt_opt(p.boot_upper, 4));
            }
            t.push('\n');
        }
        if self.at_bound {
            t.push_str("\nA shape parameter is on its bound; standard errors are not reported.\n");
        }
        if let Some(td) = &self.target_dose {
            t.push_str(&target_line(td));
        }
        t
    }
}

fn target_line(td: &TargetDoseEstimate) -> String {
    match td.dose {
        Some(d) => format!("\nTarget dose (delta {}): {d:.3}\n", td.delta),
        None => format!("\nTarget dose (delta {}): not reached in the dose range\n", td.delta),
    }
}

/// Fit plot: model curve with delta-method band over first-stage estimates.
fn fit_svg(fit: &FittedModel, est: &AnovaEstimate, level: f64, path: &Path) -> Res<()> {
    let xk = est.design().max_dose();
    let x0 = if est.is_placebo_adjusted() { 0.0 } else { est.design().doses()[0] };
    let grid: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| x0 + (xk - x0) * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let (curve, _) = predict_with_ci(fit, est, &grid, level)?;
    let z = qnorm(0.5 + level / 2.0);
    let marks: Vec<EstimatePoint> = est
        .design()
        .doses()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let m = est.mu_hat()[i];
            let se = est.cov()[(i, i)].sqrt();
            EstimatePoint {
                dose: d,
                value: m,
                lower: m - z * se,
                upper: m + z * se,
            }
        })
        .collect();
    write_file(path, &svg::fit_plot(&curve, &marks, &fit.label)?)
}

fn fit(ctx: &Ctx, a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Res<()> {
    let est = load_estimate(&a.estimate)?;
    let mut bounds = FitBounds::default_for(a.model, est.design());
    if let Some((lo, hi)) = a.bounds {
        bounds = bounds.with_primary(lo, hi)?;
    }
    let fit = gls_fit(&est, a.model, &bounds)?;
    if fit.any_at_bound() {
        warn(err, "a shape parameter is on its bound; Wald standard errors are suppressed");
    }
    let mut doc = FitDoc::new(&fit, &est, a.level)?;
    if a.boot > 0 {
        let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
        let cfg = BootstrapConfig {
            draws: a.boot,
            seed,
            quantiles: (0.5 - a.level / 2.0, 0.5 + a.level / 2.0),
            doses: est.design().doses().to_vec(),
        };
        let b = bootstrap(&est, a.model, &bounds, &cfg)?;
        for (p, &(lo, hi)) in doc.parameters.iter_mut().zip(&b.theta_intervals) {
            p.boot_lower = Some(lo);
            p.boot_upper = Some(hi);
        }
        let curve = b
            .curve
            .iter()
            .map(|c| CurvePoint {
                fit: fit.predict(c.dose),
                ..*c
            })
            .collect();
        doc.bootstrap = Some(BootDoc {
            draws: b.draws,
            failed: b.failed,
            seed,
            curve,
        });
    }
    if let Some(delta) = a.delta {
        doc.target_dose = Some(target_dose(&fit, delta, a.estimate.direction)?);
    }
    if let Some(p) = &a.plot {
        fit_svg(&fit, &est, a.level, p)?;
    }
    ctx.emit(out, &doc.table(), &doc, a.out.as_deref())
}

// mcpmod

#[derive(Serialize)]
struct ModelFitDoc {
    #[serde(flatten)]
    fit: FitDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

#[derive(Serialize)]
struct FitFailure {
    model: String,
    error: String,
}

#[derive(Serialize)]
struct McpmodDoc {
    test: MctDoc,
    /// Significant models by decreasing z.
    reference_set: Vec<String>,
    selection: &'static str,
    fits: Vec<ModelFitDoc>,
    fit_errors: Vec<FitFailure>,
    selected: Option<String>,
    target_dose: Option<TargetDoseEstimate>,
}

impl McpmodDoc {
    fn table(&self) -> String {
        let mut t = self.test.table();
        if self.reference_set.is_empty() {
            t.push_str("\nNo significant dose-response signal; no model is fitted.\n");
            return t;
        }
        t.push_str("\nModel fits\n\n");
        let w = self.fits.iter().map(|f| f.fit.model.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(t, "{:<w$}  {:>8}  {:>7}  Parameters", "Model", "gAIC", "weight");
        for f in &self.fits {
            let params: Vec<String> = f
                .fit
                .parameters
                .iter()
                .map(|p| format!("{}={:.4}", p.name, p.estimate))
                .collect();
            let _ = writeln!(
                t,
                "{:<w$}  {:>8.2}  {:>7}  {}",
                f.fit.model,
                f.fit.gaic,
                fmt_opt(f.weight, 3),
                params.join(" ")
            );
        }
        for e in &self.fit_errors {
            let _ = writeln!(t, "{:<w$}  fit failed: {}", e.model, e.error);
        }
        if let Some(s) = &self.selected {
            let _ = writeln!(t, "\nSelected: {s} ({})", self.selection);
        }
        if let Some(td) = &self.target_dose {
            t.push_str(&target_line(td));
        }
        t
    }
}

fn mcpmod(ctx: &Ctx, a: &McpmodArgs, out: &mut dyn Write, err: &mut dyn Write) -> Res<()> {
    let est = load_estimate(&a.estimate)?;
    let set = load_models(&a.models)?;
    check_doses(&set, &est, &a.models)?;
    let res = run_test(ctx, &est, &a.estimate, &set, a.alpha, a.contrast_cov.as_deref(), &a.qmc, err)?;
    let refs = reference_indices(&res);

    let mut fits = Vec::new();
    let mut z = Vec::new();
    let mut fit_errors = Vec::new();
    for &m in &refs {
        let model = &set.models[m];
        let bounds = FitBounds::default_for(model.family, est.design());
        match gls_fit(&est, model.family, &bounds) {
            Ok(mut f) => {
                f.label = model.label();
                z.push(res.z[m]);
                fits.push(f);
            }
            Err(e) => fit_errors.push(FitFailure {
                model: model.label(),
                error: e.to_string(),
            }),
        }
    }
    if !refs.is_empty() && fits.is_empty() {
        return Err(CliError::Core(dosekit::Error::NonConvergence(
            "no significant model could be fitted".into(),
        )));
    }

    let xk = est.design().max_dose();
    let direction = a.estimate.direction;
    let mut docs = fits
        .iter()
        .map(|f| {
            Ok(ModelFitDoc {
                fit: FitDoc::new(f, &est, a.level)?,
                weight: None,
            })
        })
        .collect::<Res<Vec<_>>>()?;
    let (selected, target, chosen) = if fits.is_empty() {
        (None, None, None)
    } else if a.selection == SelectionRule::Average {
        let avg = model_average(fits.clone())?;
        for (d, w) in docs.iter_mut().zip(&avg.weights) {
            d.weight = Some(*w);
        }
        let label = "model average".to_string();
        let td = a
            .delta
            .map(|delta| target_dose_for(&avg, &label, delta, direction, xk))
            .transpose()?;
        (Some(label), td, None)
    } else {
        let rule = match a.selection {
            SelectionRule::Maxz => Selection::MaxZ(z),
            _ => Selection::MinGaic,
        };
        let i = select_model(&fits, &rule)?;
        let td = a
            .delta
            .map(|delta| target_dose(&fits[i], delta, direction))
            .transpose()?;
        (Some(fits[i].label.clone()), td, Some(i))
    };
    if let (Some(p), Some(i)) = (&a.plot, chosen) {
        fit_svg(&fits[i], &est, a.level, p)?;
    } else if a.plot.is_some() {
        warn(err, "no single selected model; no plot written");
    }
    for d in &mut docs {
        d.fit.target_dose = None;
    }
    let doc = McpmodDoc {
        test: MctDoc::new(&res, &est, direction),
        reference_set: refs.iter().map(|&m| res.labels[m].clone()).collect(),
        selection: match a.selection {
            SelectionRule::Aic => "aic",
            SelectionRule::Maxz => "maxz",
            SelectionRule::Average => "average",
        },
        fits: docs,
        fit_errors,
        selected,
        target_dose: target,
    };
    ctx.emit(out, &doc.table(), &doc, a.out.as_deref())
}

// firststage

fn firststage(ctx: &Ctx, a: &FirststageArgs, out: &mut dyn Write) -> Res<()> {
    let data = read_subjects(&a.data, a.endpoint)?;
    let est = estimate(&data, FirstStageOptions { haldane: a.haldane })?;
    let doses = est.design().doses();
    if let Some(p) = &a.mu_out {
        let mut csv = String::from("dose,mu\n");
        for (d, m) in doses.iter().zip(est.mu_hat().iter()) {
            let _ = writeln!(csv, "{d},{m}");
        }
        write_file(p, &csv)?;
    }
    if let Some(p) = &a.cov_out {
        let header: Vec<String> = doses.iter().map(|d| d.to_string()).collect();
        let mut csv = header.join(",") + "\n";
        for r in est.cov().row_iter() {
            let vals: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            csv += &(vals.join(",") + "\n");
        }
        write_file(p, &csv)?;
    }
    if let Some(p) = &a.out {
        write_file(p, &(est.to_json() + "\n"))?;
    }
    if ctx.json {
        let text = est.to_json() + "\n";
        return out.write_all(text.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        });
    }
    let scale = if est.is_placebo_adjusted() { " (difference to placebo)" } else { "" };
    let mut t = format!("First-stage estimates, {} endpoint{scale}\n\n", a.endpoint.name());
    let _ = writeln!(t, "{:>10}  {:>10}  {:>9}", "Dose", "Estimate", "Std.Err");
    for (i, d) in doses.iter().enumerate() {
        let _ = writeln!(t, "{d:>10}  {:>10.4}  {:>9.4}", est.mu_hat()[i], est.cov()[(i, i)].sqrt());
    }
    out.write_all(t.as_bytes()).map_err(|source| CliError::Write {
        path: "<stdout>".into(),
        source,
    })
}

// simulate

#[derive(Serialize)]
struct SimDoc<'a> {
    reports: &'a [SimReport],
}

fn simulate(ctx: &Ctx, a: &SimulateArgs, out: &mut dyn Write) -> Res<()> {
    let names = if a.scenario == "all" {
        SimScenario::preset_names()
    } else {
        vec![a.scenario.clone()]
    };
    let (sizes, reps): (Vec<usize>, usize) = if a.full_paper {
        (FULL_SAMPLE_SIZES.to_vec(), FULL_PAPER_REPS)
    } else {
        (vec![a.n], a.reps)
    };
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    let cfg = StudyConfig {
        boot_draws: a.boot,
        level: a.level,
    };
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Core(dosekit::Error::InvalidParameter(format!(
            "level must be in (0, 1), got {}",
            a.level
        ))));
    }
    let mut reports = Vec::new();
    for name in &names {
        for &n in &sizes {
            let scenario = SimScenario::preset(name, n, reps, seed)?;
            reports.push(run_scenario(&scenario, &cfg)?);
        }
    }
    if let Some(p) = &a.plot {
        write_file(p, &svg::report_plot(&reports)?)?;
    }
    let mut t = String::from("Simulation study\n\n");
    let w = reports.iter().map(|r| r.scenario.name.len()).max().unwrap_or(8);
    let _ = writeln!(
        t,
        "{:<w$}  {:>5}  {:>5}  {:>5}  {:>7}  {:>9}  {:>8}",
        "Scenario", "n", "reps", "fits", "GLS", "GLS-B", "RMSE"
    );
    for r in &reports {
        let _ = writeln!(
            t,
            "{:<w$}  {:>5}  {:>5}  {:>5}  {:>7.3}  {:>9}  {:>8.4}",
            r.scenario.name,
            r.scenario.n_per_arm,
            r.scenario.replicates,
            r.completed,
            r.gls.mean,
            fmt_opt(r.gls_boot.as_ref().map(|b| b.mean), 3),
            r.rmse_mean
        );
    }
    let _ = writeln!(t, "\nColumns GLS and GLS-B give mean coverage of {:.0}% intervals.", 100.0 * a.level);
    ctx.emit(out, &t, &SimDoc { reports: &reports }, a.out.as_deref())
}

// crit

#[derive(Serialize)]
struct CritDoc {
    alpha: f64,
    dimension: usize,
    critical: f64,
    accuracy_reached: bool,
    mvn_seed: u64,
}

fn crit(ctx: &Ctx, a: &CritArgs, out: &mut dyn Write, err: &mut dyn Write) -> Res<()> {
    let (_, r) = read_matrix(&a.corr)?;
    let corr = CorrMatrix::new(r).map_err(|err| CliError::InFile {
        path: a.corr.clone(),
        err,
    })?;
    let cfg = ctx.qmc(&a.qmc)?;
    let cv = critical_value(&corr, a.alpha, &cfg)?;
    if !cv.accuracy_reached {
        warn(err, "MVN integration did not reach its target error; see --mvn-tol");
    }
    let doc = CritDoc {
        alpha: a.alpha,
        dimension: corr.dim(),
        critical: cv.value,
        accuracy_reached: cv.accuracy_reached,
        mvn_seed: cfg.seed,
    };
    let t = format!(
        "Critical value: {:.4} (alpha = {}, {} contrasts)\n",
        doc.critical, doc.alpha, doc.dimension
    );
    ctx.emit(out, &t, &doc, a.out.as_deref())
}
