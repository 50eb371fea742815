//! Goodness-of-fit and convergence-order helpers used by the validation
//! suites.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};

/// Asymptotic Kolmogorov–Smirnov coefficient at the 1% level.
pub const KS_COEFF_1PCT: f64 = 1.628;

/// One-sample Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(KurthError::EmptyEnsemble);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    }))
}

/// Critical value of the KS statistic at the 1% level for `n` samples.
pub fn ks_critical_1pct(n: usize) -> f64 {
    KS_COEFF_1PCT / (n as f64).sqrt()
}

/// Histogram of a weighted radial sample on spherical shells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellHistogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub density: Vec<f64>,
    /// Binomial standard error of each shell density.
    pub sigma: Vec<f64>,
}

impl ShellHistogram {
    /// Bins `radii` into shells bounded by `edges` (strictly increasing,
    /// starting at 0 or above). The standard error treats the sample as `n`
    /// equal-weight draws of total mass `Σ weights`.
    pub fn new(radii: &[f64], weights: &[f64], edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
            return Err(KurthError::InvalidGrid("shell edges must be increasing and non-negative".into()));
        }
        if radii.is_empty() {
            return Err(KurthError::EmptyEnsemble);
        }
        let shells = edges.len() - 1;
        let mut mass = vec![0.0; shells];
        let mut counts = vec![0usize; shells];
        for (&r, &w) in radii.iter().zip(weights) {
            let k = edges.partition_point(|&e| e <= r);
            if k >= 1 && k <= shells {
                mass[k - 1] += w;
                counts[k - 1] += 1;
            }
        }
        let n = radii.len() as f64;
        let total: f64 = weights.iter().sum();
        let mut density = Vec::with_capacity(shells);
        let mut sigma = Vec::with_capacity(shells);
        for k in 0..shells {
            let vol = 4.0 * PI / 3.0 * (edges[k + 1].powi(3) - edges[k].powi(3));
            let p = counts[k] as f64 / n;
            density.push(mass[k] / vol);
            sigma.push(total * (p * (1.0 - p) / n).sqrt() / vol);
        }
        Ok(Self { edges: edges.to_vec(), mass, density, sigma })
    }

    pub fn centres(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Largest `|density - expected| / sigma` over shells with `sigma > 0`.
    pub fn max_z<F: Fn(f64, f64) -> f64>(&self, expected: F, sigma_floor: f64) -> f64 {
        self.edges
            .windows(2)
            .zip(self.density.iter().zip(&self.sigma))
            .map(|(w, (&d, &s))| (d - expected(w[0], w[1])).abs() / s.max(sigma_floor))
            .fold(0.0, f64::max)
    }

    /// Root-mean-square deviation from an expected shell density.
    pub fn rms_error<F: Fn(f64, f64) -> f64>(&self, expected: F) -> f64 {
        let sum: f64 = self
            .edges
            .windows(2)
            .zip(&self.density)
            .map(|(w, &d)| (d - expected(w[0], w[1])).powi(2))
            .sum();
        (sum / self.density.len() as f64).sqrt()
    }
}

/// Wasserstein-1 distance between two mass distributions given as masses on
/// the same shells: `∫ |M_a(r) - M_b(r)| dr` with masses spread uniformly
/// in radius within each shell.
pub fn wasserstein1_shells(edges: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    if edges.len() != a.len() + 1 || a.len() != b.len() {
        return Err(KurthError::InvalidParameter("shell mass arrays do not match the edges".into()));
    }
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        let width = edges[k + 1] - edges[k];
        let (d0, d1) = (ca - cb, ca + a[k] - cb - b[k]);
        // exact integral of |linear| over the shell
        acc += width
            * if d0 * d1 >= 0.0 {
                0.5 * (d0.abs() + d1.abs())
            } else {
                0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
            };
        ca += a[k];
        cb += b[k];
    }
    Ok(acc)
}

/// Wasserstein-1 distance between two weighted samples on the line.
pub fn wasserstein1_samples(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(KurthError::EmptyEnsemble);
    }
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&x| (x, 1.0 / a.len() as f64))
        .chain(b.iter().map(|&x| (x, -1.0 / b.len() as f64)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut acc = 0.0;
    for w in events.windows(2) {
        diff += w[0].1;
        acc += diff.abs() * (w[1].0 - w[0].0);
    }
    Ok(acc)
}

/// Weighted quantile `q ∈ [0, 1]` of `values`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(KurthError::EmptyEnsemble);
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let total: f64 = weights.iter().sum();
    let target = q.clamp(0.0, 1.0) * total;
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= target {
            return Ok(values[i]);
        }
    }
    Ok(values[*idx.last().expect("non-empty")])
}

/// Least-squares line `log y = slope · log x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(KurthError::InvalidParameter("need at least two matching points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(KurthError::InvalidParameter("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(KurthError::InvalidParameter("levels must differ".into()));
    }
    let slope = sxy / sxx;
    Ok(LogLogFit { slope, intercept: my - slope * mx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert_relative_eq!(d, 0.5 / n as f64, epsilon = 1e-12);
        let shifted = ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(shifted > ks_critical_1pct(n));
        assert!(ks_statistic(&[], |x| x).is_err());
    }

    #[test]
    fn histogram_of_uniform_ball() {
        let n = 8000;
        let radii: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64).cbrt()).collect();
        let w = vec![1.0 / n as f64; n];
        let edges: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let h = ShellHistogram::new(&radii, &w, &edges).unwrap();
        let rho = 3.0 / (4.0 * PI);
        assert!(h.max_z(|_, _| rho, 0.0) < 1.0);
        assert_relative_eq!(h.mass.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(h.rms_error(|_, _| rho) < 1e-2);
    }

    #[test]
    fn wasserstein_examples() {
        let edges = [0.0, 1.0, 2.0];
        assert_eq!(wasserstein1_shells(&edges, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        // unit mass moved by one shell width
        assert_relative_eq!(wasserstein1_shells(&edges, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(wasserstein1_samples(&[0.0, 1.0], &[0.5, 1.5]).unwrap(), 0.5);
    }

    #[test]
    fn quantiles_and_fits() {
        let v = [3.0, 1.0, 2.0, 4.0];
        let w = [0.25; 4];
        assert_eq!(weighted_quantile(&v, &w, 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 1.0).unwrap(), 4.0);
        let x = [1e3, 1e4, 1e5];
        let y: Vec<f64> = x.iter().map(|n: &f64| 2.0 * n.powf(-0.5)).collect();
        let fit = loglog_fit(&x, &y).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 2f64.ln(), epsilon = 1e-10);
        assert!(loglog_fit(&[1.0], &[1.0]).is_err());
        assert!(loglog_fit(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    }
}
