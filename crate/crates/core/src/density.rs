//! Univariate Gaussian kernel density estimation.
//!
//! `p̂(x) = 1/(n·h) · Σᵢ K((x − xᵢ)/h)` with `K` the standard normal density.
//! The bandwidth defaults to Silverman's rule `h* = (4σ̂⁵ / 3n)^(1/5)`, and
//! draws come from the smoothed bootstrap `x_I + h·ε`, which samples the
//! mixture exactly.

use alloc::vec::Vec;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KdeError {
    #[error("need at least {needed} sample(s), got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Silverman,
    Fixed(f64),
}

/// Standard normal density.
pub fn gaussian_kernel(u: f64) -> f64 {
    INV_SQRT_2PI * math::exp(-0.5 * u * u)
}

/// Bandwidth used when every sample is identical: `1e-9 · max(1, |mean|)`.
pub fn bandwidth_floor(samples: &[f64]) -> f64 {
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    1e-9 * mean.abs().max(1.0)
}

/// Sample standard deviation with the `n − 1` denominator.
pub fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    math::sqrt(ss / (n - 1.0))
}

/// Silverman's rule for a Gaussian kernel.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, KdeError> {
    if samples.len() < 2 {
        return Err(KdeError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    check_finite(samples)?;
    if samples.iter().all(|&x| x == samples[0]) {
        return Ok(bandwidth_floor(samples));
    }
    let sigma = sample_std(samples);
    let n = samples.len() as f64;
    let h = math::powf(4.0 * math::powf(sigma, 5.0) / (3.0 * n), 0.2);
    Ok(if h > 0.0 { h } else { bandwidth_floor(samples) })
}

fn check_finite(samples: &[f64]) -> Result<(), KdeError> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(KdeError::NonFinite { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn fit(samples: Vec<f64>, bandwidth: Bandwidth) -> Result<Self, KdeError> {
        if samples.is_empty() {
            return Err(KdeError::TooFewSamples { needed: 1, got: 0 });
        }
        check_finite(&samples)?;
        let h = match bandwidth {
            Bandwidth::Silverman => silverman_bandwidth(&samples)?,
            Bandwidth::Fixed(h) => h,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(KdeError::InvalidBandwidth(h));
        }
        Ok(KdeModel {
            samples,
            bandwidth: h,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dimension(&self) -> usize {
        1
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .map(|&xi| gaussian_kernel((x - xi) / h))
            .sum();
        sum / (self.samples.len() as f64 * h)
    }

    /// Mixture CDF, used by goodness-of-fit checks.
    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .map(|&xi| 0.5 * libm::erfc(-(x - xi) / (h * core::f64::consts::SQRT_2)))
            .sum();
        sum / self.samples.len() as f64
    }

    pub fn sample_one<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = rng.random_range(0..self.samples.len());
        let eps: f64 = rng.sample(StandardNormal);
        self.samples[i] + self.bandwidth * eps
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}
