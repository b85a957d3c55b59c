//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use fairforecast_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// `H Hᵀ` of an `N × o` tensor as nested rows.
pub fn gram_rows(h: &Tensor) -> Vec<Vec<f64>> {
    let (n, o) = (h.shape()[0], h.shape()[1]);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..o).map(|k| h.get(&[i, k]) * h.get(&[j, k])).sum())
                .collect()
        })
        .collect()
}

/// Energy outside the top-k eigen-directions of `H Hᵀ`.
pub fn discarded_energy(h: &Tensor, k: usize) -> f64 {
    jacobi_eigenvalues(&gram_rows(h))
        .iter()
        .skip(k)
        .map(|v| v.max(0.0))
        .sum()
}

/// Random `n × k` column-orthonormal matrix (classical Gram–Schmidt, twice).
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut ok = true;
        for _ in 0..k {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for c in &cols {
                    let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
        if ok {
            let mut data = vec![0.0; n * k];
            for (j, c) in cols.iter().enumerate() {
                for i in 0..n {
                    data[i * k + j] = c[i];
                }
            }
            return Tensor::from_vec(&[n, k], data).unwrap();
        }
    }
}

/// `‖H‖² − ‖Fᵀ H‖²` by explicit loops, `H` being `N × o` and `F` `N × k`.
pub fn naive_cluster_loss(h: &Tensor, f: &Tensor) -> f64 {
    let (n, o, k) = (h.shape()[0], h.shape()[1], f.shape()[1]);
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..o {
            total += h.get(&[i, c]).powi(2);
        }
    }
    let mut captured = 0.0;
    for j in 0..k {
        for c in 0..o {
            let s: f64 = (0..n).map(|i| f.get(&[i, j]) * h.get(&[i, c])).sum();
            captured += s * s;
        }
    }
    total - captured
}

pub struct NaiveMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mape_valid: bool,
    pub var: f64,
    pub per_variable: Vec<f64>,
}

/// Metrics by explicit loops over `[B, h, N]`.
pub fn naive_metrics(y: &Tensor, p: &Tensor) -> NaiveMetrics {
    let s = y.shape();
    let (b, h, n) = (s[0], s[1], s[2]);
    let mut per_variable = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for bi in 0..b {
            for j in 0..h {
                acc += (y.get(&[bi, j, i]) - p.get(&[bi, j, i])).abs();
            }
        }
        per_variable.push(acc / (b * h) as f64);
    }
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut cnt = 0usize;
    for bi in 0..b {
        for j in 0..h {
            for i in 0..n {
                let (a, q) = (y.get(&[bi, j, i]), p.get(&[bi, j, i]));
                sq += (a - q) * (a - q);
                if a != 0.0 {
                    pct += ((a - q) / a).abs();
                    cnt += 1;
                }
            }
        }
    }
    let mae = per_variable.iter().sum::<f64>() / n as f64;
    let mut var = 0.0;
    for v in &per_variable {
        var += (v - mae) * (v - mae);
    }
    NaiveMetrics {
        mae,
        rmse: (sq / (b * h * n) as f64).sqrt(),
        mape: if cnt > 0 { pct / cnt as f64 } else { 0.0 },
        mape_valid: cnt > 0,
        var: var / n as f64,
        per_variable,
    }
}

/// Largest relative deviation between analytic and central-difference
/// gradients; entries where both are below `floor` are compared absolutely.
pub fn gradient_mismatch(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Noiseless sinusoids, one phase per variable, time-major.
pub fn sinusoids(n_vars: usize, steps: usize, period: f64) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|t| {
            (0..n_vars)
                .map(|i| (2.0 * std::f64::consts::PI * t as f64 / period + i as f64 * 0.8).sin())
                .collect()
        })
        .collect()
}
