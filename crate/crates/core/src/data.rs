//! Loading, splitting, normalizing and windowing of multivariate series.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A time-major `T × N` matrix of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    values: Tensor,
    pub variable_names: Option<Vec<String>>,
    pub interval: Option<String>,
}

impl SeriesMatrix {
    /// Builds a matrix from a `[T, N]` tensor. `T` may be zero (an empty
    /// split), `N` may not, and every entry must be finite.
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.shape()[1] == 0 {
            return Err(Error::Shape(format!(
                "series must be T x N with N >= 1, got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::InvalidArgument("series contains non-finite values".into()));
        }
        Ok(SeriesMatrix {
            values,
            variable_names: None,
            interval: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows))
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_vars() {
            return Err(Error::Shape(format!(
                "{} names for {} variables",
                names.len(),
                self.n_vars()
            )));
        }
        self.variable_names = Some(names);
        Ok(self)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n_steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values.data()[t * self.n_vars() + i]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_vars();
        &self.values.data()[t * n..(t + 1) * n]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_steps()).map(|t| self.get(t, i)).collect()
    }

    /// Rows `start..end` as a new matrix, keeping the metadata.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesMatrix {
        let n = self.n_vars();
        let data = self.values.data()[start * n..end * n].to_vec();
        SeriesMatrix {
            values: Tensor::from_vec(&[end - start, n], data).unwrap(),
            variable_names: self.variable_names.clone(),
            interval: self.interval.clone(),
        }
    }

    /// Stacks matrices with the same variable count along time.
    pub fn concat(parts: &[&SeriesMatrix]) -> Result<SeriesMatrix> {
        let n = parts
            .first()
            .ok_or_else(|| Error::EmptyData("nothing to concatenate".into()))?
            .n_vars();
        let mut data = Vec::new();
        let mut t = 0;
        for p in parts {
            if p.n_vars() != n {
                return Err(Error::Shape("variable counts differ".into()));
            }
            data.extend_from_slice(p.values.data());
            t += p.n_steps();
        }
        let mut out = SeriesMatrix::new(Tensor::from_vec(&[t, n], data)?)?;
        out.variable_names = parts[0].variable_names.clone();
        out.interval = parts[0].interval.clone();
        Ok(out)
    }

    /// Writes the matrix as CSV, with a header row when names are known.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        if let Some(names) = &self.variable_names {
            writeln!(out, "{}", names.join(",")).map_err(io)?;
        }
        for t in 0..self.n_steps() {
            let line: Vec<String> = self.row(t).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Reads a plain numeric CSV, one time step per row.
///
/// Row numbers in errors are 1-based file lines (the header counts as a line).
pub fn load_series(path: &Path, has_header: bool) -> Result<SeriesMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let mut names = None;
    let mut width = None;
    let mut data = Vec::new();
    let mut steps = 0;
    for (line, record) in reader.records().enumerate() {
        let row = line + 1;
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if has_header && names.is_none() {
            names = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    row,
                    record.len().min(w) + 1,
                    format!("expected {w} fields, found {}", record.len()),
                ))
            }
            _ => width = Some(record.len()),
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, col + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, col + 1, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let n = width.unwrap_or(0);
    let mut series = SeriesMatrix::new(Tensor::from_vec(&[steps, n], data)?)?;
    series.variable_names = names;
    Ok(series)
}

/// Contiguous train/validation/test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SeriesMatrix,
    pub val: SeriesMatrix,
    pub test: SeriesMatrix,
}

/// Splits along time with sizes `floor(T·r1)`, `floor(T·r2)` and the remainder.
pub fn chronological_split(series: &SeriesMatrix, ratios: [f64; 3]) -> Result<Split> {
    if ratios.iter().any(|&r| r < 0.0 || !r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let t = series.n_steps();
    // The small slack keeps products like 0.29 * 100 from flooring to 28.
    let n_train = ((t as f64 * ratios[0]) + 1e-9).floor() as usize;
    let n_val = (((t as f64 * ratios[1]) + 1e-9).floor() as usize).min(t - n_train);
    Ok(Split {
        train: series.slice_rows(0, n_train),
        val: series.slice_rows(n_train, n_train + n_val),
        test: series.slice_rows(n_train + n_val, t),
    })
}

/// Per-variable min and max of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationState {
    pub per_variable_min: Vec<f64>,
    pub per_variable_max: Vec<f64>,
}

/// Min-max scaler; degenerate (constant) variables map to 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinMaxNormalizer {
    state: Option<NormalizationState>,
}

impl MinMaxNormalizer {
    pub fn unfitted() -> Self {
        Self::default()
    }

    pub fn fit(train: &SeriesMatrix) -> Result<Self> {
        if train.n_steps() == 0 {
            return Err(Error::EmptyData("cannot fit a normalizer on an empty split".into()));
        }
        let n = train.n_vars();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for t in 0..train.n_steps() {
            for (i, &v) in train.row(t).iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(Self::from_state(NormalizationState {
            per_variable_min: min,
            per_variable_max: max,
        }))
    }

    pub fn from_state(state: NormalizationState) -> Self {
        MinMaxNormalizer { state: Some(state) }
    }

    pub fn state(&self) -> Option<&NormalizationState> {
        self.state.as_ref()
    }

    fn fitted(&self, n: usize) -> Result<&NormalizationState> {
        let s = self.state.as_ref().ok_or(Error::NotFitted)?;
        if s.per_variable_min.len() != n {
            return Err(Error::Shape(format!(
                "normalizer fitted on {} variables, data has {n}",
                s.per_variable_min.len()
            )));
        }
        Ok(s)
    }

    /// Scales a tensor whose last axis indexes variables.
    pub fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let n = *x.shape().last().unwrap_or(&0);
        let s = self.fitted(n)?;
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let i = k % n;
            let (lo, hi) = (s.per_variable_min[i], s.per_variable_max[i]);
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
        }
        Ok(out)
    }

    pub fn invert_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let n = *x.shape().last().unwrap_or(&0);
        let s = self.fitted(n)?;
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let i = k % n;
            let (lo, hi) = (s.per_variable_min[i], s.per_variable_max[i]);
            *v = if hi > lo { *v * (hi - lo) + lo } else { lo };
        }
        Ok(out)
    }

    pub fn apply(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        let mut out = series.clone();
        out.values = self.apply_tensor(series.values())?;
        Ok(out)
    }

    pub fn invert(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        let mut out = series.clone();
        out.values = self.invert_tensor(series.values())?;
        Ok(out)
    }

    /// Width `max − min` of each variable's training range.
    pub fn ranges(&self) -> Result<Vec<f64>> {
        let s = self.state.as_ref().ok_or(Error::NotFitted)?;
        Ok(s.per_variable_max
            .iter()
            .zip(&s.per_variable_min)
            .map(|(hi, lo)| hi - lo)
            .collect())
    }
}

/// Paired input and target windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[B, w, N]`
    pub inputs: Tensor,
    /// `[B, h, N]`
    pub targets: Tensor,
    /// The last input step `t` of each window, relative to its split.
    pub anchor_indices: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.anchor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_indices.is_empty()
    }
}

/// Sliding windows (stride 1) over a single split, materialized lazily.
#[derive(Debug, Clone)]
pub struct Windows {
    series: SeriesMatrix,
    window: usize,
    horizon: usize,
}

/// Builds the window view; fails if the split cannot hold one window.
pub fn make_windows(split: &SeriesMatrix, window: usize, horizon: usize) -> Result<Windows> {
    if window == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("window and horizon must be positive".into()));
    }
    let required = window + horizon;
    if split.n_steps() < required {
        return Err(Error::SplitTooShort {
            len: split.n_steps(),
            required,
        });
    }
    Ok(Windows {
        series: split.clone(),
        window,
        horizon,
    })
}

impl Windows {
    pub fn len(&self) -> usize {
        self.series.n_steps() - self.window - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_vars(&self) -> usize {
        self.series.n_vars()
    }

    pub fn series(&self) -> &SeriesMatrix {
        &self.series
    }

    /// Gathers the windows with the given ordinals into one batch.
    pub fn batch(&self, ordinals: &[usize]) -> WindowBatch {
        let n = self.n_vars();
        let (w, h) = (self.window, self.horizon);
        let vals = self.series.values().data();
        let mut inputs = Vec::with_capacity(ordinals.len() * w * n);
        let mut targets = Vec::with_capacity(ordinals.len() * h * n);
        let mut anchors = Vec::with_capacity(ordinals.len());
        for &b in ordinals {
            assert!(b < self.len(), "window {b} out of range");
            let t = w - 1 + b;
            inputs.extend_from_slice(&vals[(t + 1 - w) * n..(t + 1) * n]);
            targets.extend_from_slice(&vals[(t + 1) * n..(t + 1 + h) * n]);
            anchors.push(t);
        }
        let b = ordinals.len();
        WindowBatch {
            inputs: Tensor::from_vec(&[b, w, n], inputs).unwrap(),
            targets: Tensor::from_vec(&[b, h, n], targets).unwrap(),
            anchor_indices: anchors,
        }
    }

    /// Consecutive batches in window order.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = WindowBatch> + '_ {
        let order: Vec<usize> = (0..self.len()).collect();
        self.batches_in_order(order, batch_size)
    }

    /// Batches following an explicit window order.
    pub fn batches_in_order(&self, order: Vec<usize>, batch_size: usize) -> impl Iterator<Item = WindowBatch> + '_ {
        let bs = batch_size.max(1);
        let n_batches = order.len().div_ceil(bs);
        (0..n_batches).map(move |k| {
            let end = ((k + 1) * bs).min(order.len());
            self.batch(&order[k * bs..end])
        })
    }
}

/// Parameters of the two-group synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_easy: usize,
    pub n_hard: usize,
    pub steps: usize,
    pub noise_easy: f64,
    pub noise_hard: f64,
    pub seed: u64,
    pub period: f64,
    /// Hard variables redraw their phase every this many steps; 0 disables jumps.
    pub jump_every: usize,
    pub level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_easy: 8,
            n_hard: 8,
            steps: 2000,
            noise_easy: 0.02,
            noise_hard: 0.2,
            seed: 0,
            period: 24.0,
            jump_every: 48,
            level: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableGroup {
    Easy,
    Hard,
}

impl VariableGroup {
    pub fn label(self) -> &'static str {
        match self {
            VariableGroup::Easy => "easy",
            VariableGroup::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSeries {
    pub series: SeriesMatrix,
    pub groups: Vec<VariableGroup>,
}

/// Generates phase-shifted sinusoids: the first `n_easy` columns carry
/// small noise, the remaining `n_hard` columns carry larger noise and
/// random phase jumps.
pub fn synth_two_group(cfg: &SynthConfig) -> Result<SyntheticSeries> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("synthetic length must be positive".into()));
    }
    if cfg.n_easy == 0 || cfg.n_hard == 0 {
        return Err(Error::InvalidArgument("both groups need at least one variable".into()));
    }
    if cfg.noise_easy < 0.0 || cfg.noise_hard < 0.0 || cfg.period <= 0.0 {
        return Err(Error::InvalidArgument("noise scales must be non-negative".into()));
    }
    let n = cfg.n_easy + cfg.n_hard;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phases: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let mut jump = vec![0.0; n];
    let mut data = Vec::with_capacity(cfg.steps * n);
    for t in 0..cfg.steps {
        if cfg.jump_every > 0 && t % cfg.jump_every == 0 {
            for j in jump.iter_mut().skip(cfg.n_easy) {
                *j = rng.random_range(0.0..TAU);
            }
        }
        for i in 0..n {
            let angle = TAU * t as f64 / cfg.period + phases[i] + jump[i];
            let scale = if i < cfg.n_easy { cfg.noise_easy } else { cfg.noise_hard };
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(cfg.level + angle.sin() + scale * noise);
        }
    }
    let names = (0..n)
        .map(|i| {
            if i < cfg.n_easy {
                format!("easy_{i}")
            } else {
                format!("hard_{}", i - cfg.n_easy)
            }
        })
        .collect();
    let series = SeriesMatrix::new(Tensor::from_vec(&[cfg.steps, n], data)?)?.with_names(names)?;
    let groups = (0..n)
        .map(|i| {
            if i < cfg.n_easy {
                VariableGroup::Easy
            } else {
                VariableGroup::Hard
            }
        })
        .collect();
    Ok(SyntheticSeries { series, groups })
}
