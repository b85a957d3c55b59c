//! Accuracy (MAE, RMSE, MAPE) and fairness (variance of per-variable MAE)
//! metrics over stacked `[B, h, N]` targets and predictions.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scale on which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricScale {
    #[default]
    Original,
    Normalized,
}

impl fmt::Display for MetricScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricScale::Original => "original",
            MetricScale::Normalized => "normalized",
        })
    }
}

impl FromStr for MetricScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(MetricScale::Original),
            "normalized" => Ok(MetricScale::Normalized),
            other => Err(Error::Config(format!(
                "metric scale must be 'original' or 'normalized', got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    /// False when every target was zero and MAPE had no valid entries.
    pub mape_valid: bool,
    pub var_fairness: f64,
    pub per_variable_mae: Vec<f64>,
    pub per_horizon_mae: Vec<f64>,
    pub scale: MetricScale,
    pub n_windows: usize,
}

fn dims(y: &Tensor, y_hat: &Tensor) -> Result<(usize, usize, usize)> {
    if y.shape() != y_hat.shape() || y.rank() != 3 {
        return Err(Error::Shape(format!(
            "targets {:?} vs predictions {:?}",
            y.shape(),
            y_hat.shape()
        )));
    }
    let s = y.shape();
    if s.contains(&0) {
        return Err(Error::EmptyData("no windows to evaluate".into()));
    }
    Ok((s[0], s[1], s[2]))
}

/// Mean absolute error of each variable, pooled over windows and horizons.
pub fn per_variable_abs_error(y: &Tensor, y_hat: &Tensor) -> Result<Vec<f64>> {
    let (b, h, n) = dims(y, y_hat)?;
    let mut acc = vec![0.0; n];
    for (k, (a, p)) in y.data().iter().zip(y_hat.data()).enumerate() {
        acc[k % n] += (a - p).abs();
    }
    let count = (b * h) as f64;
    Ok(acc.into_iter().map(|s| s / count).collect())
}

/// Population variance.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn aggregate(y: &Tensor, y_hat: &Tensor, scale: MetricScale) -> Result<MetricsReport> {
    let (b, h, n) = dims(y, y_hat)?;
    let per_variable_mae = per_variable_abs_error(y, y_hat)?;
    let mae = per_variable_mae.iter().sum::<f64>() / n as f64;

    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut valid = 0usize;
    let mut per_h = vec![0.0; h];
    for (k, (a, p)) in y.data().iter().zip(y_hat.data()).enumerate() {
        let e = a - p;
        sq += e * e;
        if a.abs() > 0.0 {
            pct += e.abs() / a.abs();
            valid += 1;
        }
        per_h[(k / n) % h] += e.abs();
    }
    let total = (b * h * n) as f64;
    let per_horizon_mae = per_h.into_iter().map(|s| s / (b * n) as f64).collect();
    Ok(MetricsReport {
        mae,
        rmse: (sq / total).sqrt(),
        mape: if valid > 0 { pct / valid as f64 } else { 0.0 },
        mape_valid: valid > 0,
        var_fairness: population_variance(&per_variable_mae),
        per_variable_mae,
        per_horizon_mae,
        scale,
        n_windows: b,
    })
}

impl MetricsReport {
    /// `key = value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scale = {}\n", self.scale));
        s.push_str(&format!("n_windows = {}\n", self.n_windows));
        s.push_str(&format!("n_variables = {}\n", self.per_variable_mae.len()));
        s.push_str(&format!("mae = {:.10}\n", self.mae));
        s.push_str(&format!("rmse = {:.10}\n", self.rmse));
        s.push_str(&format!("mape = {:.10}\n", self.mape));
        s.push_str(&format!("mape_valid = {}\n", self.mape_valid));
        s.push_str(&format!("var = {:.10}\n", self.var_fairness));
        let ph: Vec<String> = self.per_horizon_mae.iter().map(|v| format!("{v:.10}")).collect();
        s.push_str(&format!("per_horizon_mae = {}\n", ph.join(",")));
        s
    }

    pub fn write_per_variable_csv(&self, path: &Path, names: Option<&[String]>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "variable,name,mae").map_err(io)?;
        for (i, m) in self.per_variable_mae.iter().enumerate() {
            let name = names.and_then(|n| n.get(i)).map_or("", String::as_str);
            writeln!(out, "{i},{name},{m}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
