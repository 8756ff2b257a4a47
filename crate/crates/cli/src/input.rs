//! CSV and JSON ingestion with line-numbered diagnostics.

use std::fs;
use std::path::{Path, PathBuf};

use dosekit::firststage::{BinomialCount, Observation, SubjectData, SurvivalRecord};
use dosekit::simharness::Endpoint;
use dosekit::{DMatrix, DVector};

use crate::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, line: u64, msg: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Header plus data rows, each tagged with its 1-based line number.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| csv_error(path, e.position().map_or(1, |p| p.line()), e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(csv_error(path, 1, "missing header row"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                csv_error(path, e.position().map_or(0, |p| p.line()), e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                csv_error(
                    &self.path,
                    1,
                    format!("missing column '{name}' (header is '{}')", self.header.join(",")),
                )
            })
    }

    fn number(&self, line: u64, field: &str, what: &str) -> Result<f64, CliError> {
        let v: f64 = field
            .parse()
            .map_err(|_| csv_error(&self.path, line, format!("{what}: '{field}' is not a number")))?;
        if !v.is_finite() {
            return Err(csv_error(&self.path, line, format!("{what} must be finite")));
        }
        Ok(v)
    }

    fn count(&self, line: u64, field: &str, what: &str) -> Result<u64, CliError> {
        field.parse().map_err(|_| {
            csv_error(
                &self.path,
                line,
                format!("{what}: '{field}' is not a nonnegative integer"),
            )
        })
    }

    fn non_empty(&self) -> Result<(), CliError> {
        if self.rows.is_empty() {
            return Err(csv_error(&self.path, 2, "no data rows"));
        }
        Ok(())
    }
}

/// `dose,mu` file of per-dose estimates.
pub fn read_mu(path: &Path) -> Result<(Vec<f64>, DVector<f64>), CliError> {
    let t = Table::read(path)?;
    let (cd, cm) = (t.column("dose")?, t.column("mu")?);
    t.non_empty()?;
    let mut doses = Vec::with_capacity(t.rows.len());
    let mut mu = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        doses.push(t.number(*line, &row[cd], "dose")?);
        mu.push(t.number(*line, &row[cm], "mu")?);
    }
    Ok((doses, DVector::from_vec(mu)))
}

/// Dense square matrix with a header row of labels.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let t = Table::read(path)?;
    let k = t.header.len();
    if t.rows.len() != k {
        let line = t.rows.last().map_or(1, |(l, _)| *l);
        return Err(csv_error(
            path,
            line,
            format!("expected {k} data rows to match the {k} header labels, found {}", t.rows.len()),
        ));
    }
    let mut m = DMatrix::zeros(k, k);
    for (i, (line, row)) in t.rows.iter().enumerate() {
        for (j, field) in row.iter().enumerate() {
            m[(i, j)] = t.number(*line, field, &format!("entry ({}, {})", i + 1, j + 1))?;
        }
    }
    Ok((t.header, m))
}

/// Covariance whose header labels must name the given doses.
pub fn read_cov(path: &Path, doses: &[f64]) -> Result<DMatrix<f64>, CliError> {
    let (labels, m) = read_matrix(path)?;
    if labels.len() != doses.len() {
        return Err(csv_error(
            path,
            1,
            format!("covariance is {0}x{0} but there are {1} doses", labels.len(), doses.len()),
        ));
    }
    for (label, &d) in labels.iter().zip(doses) {
        // non-numeric labels are accepted as plain names
        if let Ok(v) = label.parse::<f64>() {
            if v != d {
                return Err(csv_error(
                    path,
                    1,
                    format!("header label {label} does not match dose {d}"),
                ));
            }
        }
    }
    Ok(m)
}

/// Subject-level data for the given endpoint.
pub fn read_subjects(path: &Path, endpoint: Endpoint) -> Result<SubjectData, CliError> {
    let t = Table::read(path)?;
    t.non_empty()?;
    let cd = t.column("dose")?;
    match endpoint {
        Endpoint::Normal | Endpoint::Count => {
            let cr = t.column("resp")?;
            let rows = t
                .rows
                .iter()
                .map(|(line, r)| {
                    Ok(Observation {
                        dose: t.number(*line, &r[cd], "dose")?,
                        resp: t.number(*line, &r[cr], "resp")?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(if endpoint == Endpoint::Normal {
                SubjectData::Normal(rows)
            } else {
                SubjectData::Count(rows)
            })
        }
        Endpoint::Binary => {
            let (cs, cn) = (t.column("successes")?, t.column("trials")?);
            let rows = t
                .rows
                .iter()
                .map(|(line, r)| {
                    Ok(BinomialCount {
                        dose: t.number(*line, &r[cd], "dose")?,
                        successes: t.count(*line, &r[cs], "successes")?,
                        trials: t.count(*line, &r[cn], "trials")?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(SubjectData::Binary(rows))
        }
        Endpoint::Tte => {
            let (ct, ce) = (t.column("time")?, t.column("event")?);
            let rows = t
                .rows
                .iter()
                .map(|(line, r)| {
                    let event = match r[ce].as_str() {
                        "1" | "true" | "TRUE" => true,
                        "0" | "false" | "FALSE" => false,
                        other => {
                            return Err(csv_error(
                                path,
                                *line,
                                format!("event: '{other}' must be 0 or 1"),
                            ))
                        }
                    };
                    Ok(SurvivalRecord {
                        dose: t.number(*line, &r[cd], "dose")?,
                        time: t.number(*line, &r[ct], "time")?,
                        event,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(SubjectData::TimeToEvent(rows))
        }
    }
}

/// Parse `lo,hi`.
pub fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'lo,hi', got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{}' is not a number", v.trim()))
    };
    Ok((parse(lo)?, parse(hi)?))
}
