//! Per-repetition results and their aggregate (mean ± standard error).

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub run_id: usize,
    pub seed: u64,
    /// One value per metric of the owning summary, same order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for a single run.
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub metrics: Vec<String>,
    pub reps: Vec<RepResult>,
}

impl RunSummary {
    pub fn new(label: impl Into<String>, metrics: &[&str], reps: Vec<RepResult>) -> Self {
        let metrics: Vec<String> = metrics.iter().map(|m| m.to_string()).collect();
        debug_assert!(reps.iter().all(|r| r.values.len() == metrics.len()));
        Self {
            label: label.into(),
            metrics,
            reps,
        }
    }

    fn column(&self, metric: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == metric)
    }

    pub fn values(&self, metric: &str) -> Option<Vec<f64>> {
        let i = self.column(metric)?;
        Some(self.reps.iter().map(|r| r.values[i]).collect())
    }

    pub fn stat(&self, metric: &str) -> Option<MeanSe> {
        self.values(metric).map(|v| MeanSe::of(&v))
    }

    /// `run_id,seed,<metrics...>`.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["run_id".to_string(), "seed".to_string()];
        header.extend(self.metrics.iter().cloned());
        out.write_record(&header)?;
        for r in &self.reps {
            let mut row = vec![r.run_id.to_string(), r.seed.to_string()];
            row.extend(r.values.iter().map(|v| format!("{v:.6}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`write_runs_csv`](Self::write_runs_csv), up to the printed precision.
    pub fn read_runs_csv<R: Read>(label: impl Into<String>, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "run_id" || &header[1] != "seed" {
            return Err(Error::Format {
                what: "runs csv",
                detail: "header must start with run_id,seed".into(),
            });
        }
        let metrics: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let parse_err = |detail: String| Error::Format {
            what: "runs csv",
            detail,
        };
        let mut reps = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let run_id = rec[0]
                .parse()
                .map_err(|e| parse_err(format!("run_id: {e}")))?;
            let seed = rec[1]
                .parse()
                .map_err(|e| parse_err(format!("seed: {e}")))?;
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("{v}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            reps.push(RepResult {
                run_id,
                seed,
                values,
            });
        }
        Ok(Self {
            label: label.into(),
            metrics,
            reps,
        })
    }

    /// `metric,mean,standard_error,n`.
    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "mean", "standard_error", "n"])?;
        for m in &self.metrics {
            let s = self.stat(m).expect("own metric");
            out.write_record([
                m.clone(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.se),
                s.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let width = self
            .metrics
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{} ({} runs)", self.label, self.reps.len());
        for m in &self.metrics {
            let st = self.stat(m).expect("own metric");
            let _ = writeln!(s, "  {m:<width$}  {:>12.6} ± {:.6}", st.mean, st.se);
        }
        s
    }
}
