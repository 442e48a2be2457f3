//! Gaussian kernel density estimate over a sliding window of embeddings.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_PROBES: usize = 16;
pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-2;

/// The last `capacity` embeddings seen, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeWindow<T> {
    capacity: usize,
    floor: T,
    samples: VecDeque<Vec<T>>,
}

impl<T: Scalar> KdeWindow<T> {
    pub fn new(capacity: usize, floor: T) -> Self {
        KdeWindow {
            capacity: capacity.max(1),
            floor,
            samples: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn from_samples<I: IntoIterator<Item = Vec<T>>>(samples: I, floor: T) -> Self {
        let samples: VecDeque<Vec<T>> = samples.into_iter().collect();
        KdeWindow {
            capacity: samples.len().max(1),
            floor,
            samples,
        }
    }

    pub fn push(&mut self, embedding: Vec<T>) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(embedding);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.front().map(Vec::len)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Vec<T>> {
        self.samples.iter()
    }

    pub fn floor(&self) -> T {
        self.floor
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

/// Per-dimension Silverman bandwidths `max(h_min, 1.06 sigma n^(-1/5))`,
/// with `sigma` the sample standard deviation (n - 1 denominator; zero for a
/// single sample).
pub fn bandwidth_silverman<T: Scalar>(window: &KdeWindow<T>) -> Result<Vec<T>> {
    let dim = window
        .dim()
        .ok_or_else(|| Error::Config("bandwidth of an empty window".into()))?;
    let n = window.len();
    let nf = T::lit(n as f64);
    let mut mean = vec![T::zero(); dim];
    for s in window.samples() {
        if s.len() != dim {
            return Err(Error::shape(format!(
                "window sample of length {} in a {dim}-dimensional window",
                s.len()
            )));
        }
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); dim];
    for s in window.samples() {
        for ((v, &x), &m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let factor = T::lit(1.06) * nf.powf(T::lit(-0.2));
    Ok(var
        .into_iter()
        .map(|v| {
            let sigma = if n > 1 {
                (v / T::lit((n - 1) as f64)).sqrt()
            } else {
                T::zero()
            };
            (factor * sigma).max(window.floor)
        })
        .collect())
}

/// Natural log of the kernel density at `query`, evaluated stably in log space.
pub fn log_kde_density<T: Scalar>(window: &KdeWindow<T>, bandwidth: &[T], query: &[T]) -> Result<T> {
    let dim = window
        .dim()
        .ok_or_else(|| Error::Config("density of an empty window".into()))?;
    if query.len() != dim || bandwidth.len() != dim {
        return Err(Error::shape(format!(
            "query of length {} and {} bandwidths for a {dim}-dimensional window",
            query.len(),
            bandwidth.len()
        )));
    }
    Ok(log_density_unchecked(window, bandwidth, query))
}

fn log_density_unchecked<T: Scalar>(window: &KdeWindow<T>, bandwidth: &[T], query: &[T]) -> T {
    let half = T::lit(0.5);
    let log_norm: T = bandwidth
        .iter()
        .map(|&h| -(T::TAU() * h * h).ln() * half)
        .sum();
    let inv: Vec<T> = bandwidth.iter().map(|&h| T::one() / (h * h)).collect();
    let exps: Vec<T> = window
        .samples()
        .map(|s| {
            let mut q = T::zero();
            for ((&x, &y), &w) in s.iter().zip(query).zip(&inv) {
                let d = y - x;
                q += d * d * w;
            }
            -half * q
        })
        .collect();
    let peak = exps.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = exps.iter().map(|&e| (e - peak).exp()).sum();
    log_norm + peak + sum.ln() - T::lit(window.len() as f64).ln()
}

/// Diagonal Gaussian product-kernel density at `query`.
pub fn kde_density<T: Scalar>(window: &KdeWindow<T>, query: &[T]) -> Result<T> {
    let h = bandwidth_silverman(window)?;
    Ok(log_kde_density(window, &h, query)?.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector<T> {
    pub values: Vec<T>,
    /// Set when the window was empty and `values` is the neutral zero vector.
    pub cold_start: bool,
}

/// Window indices `floor(i n / probes)` used as probe points.
pub fn probe_indices(n: usize, probes: usize) -> Vec<usize> {
    (0..probes).map(|i| i * n / probes).collect()
}

/// Log-densities of the window evaluated at its own probe entries.
pub fn distribution_vector<T: Scalar>(window: &KdeWindow<T>, probes: usize) -> Result<DistributionVector<T>> {
    if window.is_empty() {
        return Ok(DistributionVector {
            values: vec![T::zero(); probes],
            cold_start: true,
        });
    }
    let h = bandwidth_silverman(window)?;
    let n = window.len();
    let values = probe_indices(n, probes)
        .into_iter()
        .map(|i| log_density_unchecked(window, &h, &window.samples[i]))
        .collect();
    Ok(DistributionVector {
        values,
        cold_start: false,
    })
}
