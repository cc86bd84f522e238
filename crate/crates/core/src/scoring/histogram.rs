//! Gaussian-smoothed histogram targets over the progress support `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    pub sigma: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bins: 10, sigma: 0.15 }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::config("histogram needs at least one bin"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("histogram sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `edge_i = i / bins` for `i = 0..=bins`.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| i as f64 / self.bins as f64).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let b = self.bins as f64;
        (0..self.bins).map(|i| (i as f64 + 0.5) / b).collect()
    }

    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.bins as f64; self.bins]
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Probability mass of `N(p, sigma²)` in each bin, truncated to `[0, 1]` and renormalized.
pub fn histogram_target(p: f64, cfg: &HistogramConfig) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("progress {p} outside [0, 1]")));
    }
    let cdf: Vec<f64> = cfg.edges().iter().map(|e| normal_cdf((e - p) / cfg.sigma)).collect();
    let mut mass: Vec<f64> = cdf.windows(2).map(|w| w[1] - w[0]).collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        // sigma so small relative to the support that every bin underflowed
        let idx = ((p * cfg.bins as f64) as usize).min(cfg.bins - 1);
        mass.iter_mut().for_each(|m| *m = 0.0);
        mass[idx] = 1.0;
        return Ok(mass);
    }
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(mass)
}

/// Expected value of the bin centers under `dist`.
pub fn histogram_expectation(dist: &[f64], cfg: &HistogramConfig) -> Result<f64> {
    if dist.len() != cfg.bins {
        return Err(Error::Dimension { expected: cfg.bins, got: dist.len() });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("distribution sums to {sum}, not 1")));
    }
    Ok(dist.iter().zip(cfg.centers()).map(|(d, c)| d * c).sum())
}
