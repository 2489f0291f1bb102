//! Least-squares fitting of `v(n) = x1 * n^x2 + x3` to a pulse-response trace.

use std::io::Read;
use std::path::Path;

use super::PowerLawFit;
use crate::error::{Error, Result};

/// Ordered `(pulse number, v_T)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrace {
    points: Vec<(u32, f64)>,
}

impl PulseTrace {
    pub fn new(points: Vec<(u32, f64)>) -> Result<Self> {
        if let Some(&(n, _)) = points.iter().find(|(n, _)| *n == 0) {
            return Err(Error::InvalidTrace(format!(
                "pulse number {n} must be >= 1"
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidTrace(format!(
                "pulse numbers must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        if let Some(&(n, v)) = points.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidTrace(format!(
                "non-finite value {v} at pulse {n}"
            )));
        }
        Ok(Self { points })
    }

    /// Samples `fit` at pulses `1..=len`.
    pub fn synthetic(fit: &PowerLawFit, len: u32) -> Self {
        Self {
            points: (1..=len).map(|n| (n, fit.value(n as f64))).collect(),
        }
    }

    /// Reads two-column CSV (`pulse_number, v_T`); a non-numeric first row is
    /// treated as a header.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut points = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::Format {
                    what: "trace csv",
                    detail: format!("row {} has {} columns", i + 1, record.len()),
                });
            }
            let n = record[0].parse::<u32>();
            let v = record[1].parse::<f64>();
            match (n, v) {
                (Ok(n), Ok(v)) => points.push((n, v)),
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::Format {
                        what: "trace csv",
                        detail: format!("row {} is not numeric", i + 1),
                    })
                }
            }
        }
        Self::new(points)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_csv_reader(file)
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub fit: PowerLawFit,
    /// Mean squared residual at the returned parameters.
    pub mse: f64,
    pub iterations: usize,
}

const EXPONENT_STARTS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
const MAX_ITERATIONS: usize = 500;

/// Minimizes the mean squared error of the power law over `trace` by
/// Levenberg-Marquardt from several exponent starting points.
pub fn fit_power_law(trace: &PulseTrace) -> Result<FitReport> {
    if trace.len() < 4 {
        return Err(Error::InvalidTrace(format!(
            "need at least 4 points for 3 parameters, got {}",
            trace.len()
        )));
    }
    let data: Vec<(f64, f64)> = trace.points.iter().map(|&(n, v)| (n as f64, v)).collect();

    let mut best: Option<FitReport> = None;
    let mut worst_failure: Option<Error> = None;
    for &x2 in &EXPONENT_STARTS {
        let (x1, x3) = linear_part(&data, x2);
        match levenberg_marquardt(&data, [x1, x2, x3]) {
            Ok(report) => {
                if best.is_none_or(|b| report.mse < b.mse) {
                    best = Some(report);
                }
            }
            Err(e) => worst_failure = Some(e),
        }
    }
    best.ok_or_else(|| worst_failure.expect("at least one start ran"))
}

/// Best `(x1, x3)` for a fixed exponent (ordinary least squares).
fn linear_part(data: &[(f64, f64)], x2: f64) -> (f64, f64) {
    let m = data.len() as f64;
    let (su, sv) = data
        .iter()
        .fold((0.0, 0.0), |(su, sv), &(n, v)| (su + n.powf(x2), sv + v));
    let (mu, mv) = (su / m, sv / m);
    let (suu, suv) = data.iter().fold((0.0, 0.0), |(suu, suv), &(n, v)| {
        let du = n.powf(x2) - mu;
        (suu + du * du, suv + du * (v - mv))
    });
    let x1 = if suu > 0.0 { suv / suu } else { 0.0 };
    (x1, mv - x1 * mu)
}

fn mse(data: &[(f64, f64)], p: &[f64; 3]) -> f64 {
    data.iter()
        .map(|&(n, v)| {
            let r = p[0] * n.powf(p[1]) + p[2] - v;
            r * r
        })
        .sum::<f64>()
        / data.len() as f64
}

fn levenberg_marquardt(data: &[(f64, f64)], mut p: [f64; 3]) -> Result<FitReport> {
    let mut cost = mse(data, &p);
    let mut lambda = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        // normal equations J^T J and J^T r
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(n, v) in data {
            let pow = n.powf(p[1]);
            let r = p[0] * pow + p[2] - v;
            let j = [pow, p[0] * pow * n.ln(), 1.0];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        if !cost.is_finite() || jtr.iter().any(|g| !g.is_finite()) {
            return Err(Error::FitFailed {
                mse: cost,
                iterations: iteration,
            });
        }
        if cost == 0.0 || jtr.iter().all(|g| g.abs() < 1e-300) {
            return Ok(FitReport {
                fit: to_fit(p),
                mse: cost,
                iterations: iteration,
            });
        }

        loop {
            let mut a = jtj;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] += lambda * jtj[d][d].max(1e-300);
            }
            let step = solve3(a, jtr.map(|g| -g));
            let trial = match step {
                Some(s) => [p[0] + s[0], p[1] + s[1], p[2] + s[2]],
                None => p,
            };
            let trial_cost = mse(data, &trial);
            let accepted = step.filter(|_| trial_cost.is_finite() && trial_cost < cost);
            if let Some(s) = accepted {
                let improvement = (cost - trial_cost) / cost;
                let moved = s
                    .iter()
                    .zip(&trial)
                    .all(|(s, t)| s.abs() <= 1e-15 * (t.abs() + 1e-300));
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                if improvement < 1e-15 || moved {
                    return Ok(FitReport {
                        fit: to_fit(p),
                        mse: cost,
                        iterations: iteration,
                    });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at machine precision: minimum reached
                return Ok(FitReport {
                    fit: to_fit(p),
                    mse: cost,
                    iterations: iteration,
                });
            }
        }
    }
    Err(Error::FitFailed {
        mse: cost,
        iterations: MAX_ITERATIONS,
    })
}

fn to_fit(p: [f64; 3]) -> PowerLawFit {
    PowerLawFit {
        x1: p[0],
        x2: p[1],
        x3: p[2],
    }
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
