//! Seeded 2-D Gaussian-mixture data sources.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::metrics::GaussianMoments;
use crate::rng::SeededStream;

/// Dimension of every sample the mixtures produce.
pub const DATA_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Centers evenly spaced on a circle, mode `i` at angle `2πi/n`.
    Ring { radius: f64 },
    /// `side × side` centers spanning `[-extent, extent]²`; `n_modes` must be
    /// a perfect square. A single mode sits at the origin.
    Grid { extent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub n_modes: usize,
    pub layout: Layout,
    pub mode_std: f64,
    /// Mode probabilities; `None` means uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for MixtureSpec {
    /// Eight modes on a ring of radius 2 with standard deviation 0.02.
    fn default() -> Self {
        Self::ring(8, 2.0, 0.02)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("mixture needs at least one mode")]
    NoModes,
    #[error("mode_std must be positive, got {0}")]
    ModeStd(f64),
    #[error("layout size must be positive, got {0}")]
    LayoutSize(f64),
    #[error("grid layout needs a square number of modes, got {0}")]
    NotSquare(usize),
    #[error("expected {expected} weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    WeightSum(f64),
    #[error("sample count must be at least 1")]
    EmptySample,
}

impl MixtureSpec {
    pub fn ring(n_modes: usize, radius: f64, mode_std: f64) -> Self {
        Self { n_modes, layout: Layout::Ring { radius }, mode_std, weights: None }
    }

    pub fn grid(n_modes: usize, extent: f64, mode_std: f64) -> Self {
        Self { n_modes, layout: Layout::Grid { extent }, mode_std, weights: None }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_modes == 0 {
            return Err(DataError::NoModes);
        }
        if !(self.mode_std > 0.0 && self.mode_std.is_finite()) {
            return Err(DataError::ModeStd(self.mode_std));
        }
        match self.layout {
            Layout::Ring { radius: size } | Layout::Grid { extent: size } if !(size > 0.0 && size.is_finite()) => {
                return Err(DataError::LayoutSize(size));
            }
            Layout::Grid { .. } => {
                let side = isqrt(self.n_modes);
                if side * side != self.n_modes {
                    return Err(DataError::NotSquare(self.n_modes));
                }
            }
            Layout::Ring { .. } => {}
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n_modes {
                return Err(DataError::WeightCount { expected: self.n_modes, found: w.len() });
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(DataError::WeightSum(sum));
            }
        }
        Ok(())
    }

    pub fn mode_weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0 / self.n_modes as f64; self.n_modes])
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        match self.layout {
            Layout::Ring { radius } => (0..self.n_modes)
                .map(|i| {
                    let angle = TAU * i as f64 / self.n_modes as f64;
                    [radius * libm::cos(angle), radius * libm::sin(angle)]
                })
                .collect(),
            Layout::Grid { extent } => {
                let side = isqrt(self.n_modes);
                let coord = |i: usize| {
                    if side == 1 {
                        0.0
                    } else {
                        -extent + 2.0 * extent * i as f64 / (side - 1) as f64
                    }
                };
                (0..self.n_modes).map(|m| [coord(m % side), coord(m / side)]).collect()
            }
        }
    }

    /// Closed-form mean and covariance of the mixture.
    pub fn analytic_moments(&self) -> GaussianMoments {
        let w = self.mode_weights();
        let centers = self.centers();
        let mut mean = [0.0; 2];
        let mut second = [[0.0; 2]; 2];
        for (c, wi) in centers.iter().zip(&w) {
            for i in 0..2 {
                mean[i] += wi * c[i];
                for j in 0..2 {
                    second[i][j] += wi * c[i] * c[j];
                }
            }
        }
        let var = self.mode_std * self.mode_std;
        let mut cov = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                cov[(i, j)] = second[i][j] - mean[i] * mean[j] + if i == j { var } else { 0.0 };
            }
        }
        GaussianMoments { mean: mean.to_vec(), cov, n_samples: usize::MAX }
    }
}

fn isqrt(n: usize) -> usize {
    let mut r = libm::sqrt(n as f64) as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Draws `n` rows: a mode by weight, then isotropic Gaussian noise around it.
pub fn sample(spec: &MixtureSpec, n: usize, stream: &mut SeededStream) -> Result<Matrix, DataError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::EmptySample);
    }
    let sampler = ModeSampler::new(spec);
    Ok(sampler.draw(n, stream))
}

/// Precomputed centers and cumulative weights for repeated sampling.
#[derive(Clone, Debug)]
struct ModeSampler {
    centers: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    std: f64,
}

impl ModeSampler {
    fn new(spec: &MixtureSpec) -> Self {
        let mut acc = 0.0;
        let cumulative = spec
            .mode_weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { centers: spec.centers(), cumulative, std: spec.mode_std }
    }

    fn draw(&self, n: usize, stream: &mut SeededStream) -> Matrix {
        let mut out = Matrix::zeros(n, DATA_DIM);
        let last = self.centers.len() - 1;
        for r in 0..n {
            let u = stream.uniform();
            let mode = self.cumulative.iter().position(|c| u < *c).unwrap_or(last);
            let c = self.centers[mode];
            let row = out.row_mut(r);
            row[0] = c[0] + self.std * stream.normal();
            row[1] = c[1] + self.std * stream.normal();
        }
        out
    }
}

/// A mixture bound to its own stream: the real-sample source for training.
#[derive(Clone, Debug)]
pub struct DataSource {
    spec: MixtureSpec,
    sampler: ModeSampler,
    stream: SeededStream,
    drawn: u64,
}

impl DataSource {
    pub fn new(spec: MixtureSpec, seed: u64) -> Result<Self, DataError> {
        spec.validate()?;
        let sampler = ModeSampler::new(&spec);
        Ok(Self { spec, sampler, stream: SeededStream::new(seed), drawn: 0 })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Total number of samples produced so far.
    pub fn samples_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn draw(&mut self, n: usize) -> Matrix {
        self.drawn += n as u64;
        self.sampler.draw(n, &mut self.stream)
    }

    /// Independent source over the same mixture.
    pub fn fork(&self, tag: u64) -> Self {
        Self { spec: self.spec.clone(), sampler: self.sampler.clone(), stream: self.stream.fork(tag), drawn: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeAssignment {
    /// Nearest mode per sample.
    pub assignments: Vec<usize>,
    /// Samples per mode; sums to the sample count.
    pub counts: Vec<usize>,
}

impl ModeAssignment {
    /// Modes that received at least one sample.
    pub fn covered_modes(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }
}

/// Nearest-center assignment by Euclidean distance; ties go to the lower index.
pub fn mode_assignment(samples: &Matrix, spec: &MixtureSpec) -> ModeAssignment {
    let centers = spec.centers();
    let mut counts = vec![0; centers.len()];
    let assignments = (0..samples.rows())
        .map(|r| {
            let x = samples.row(r);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            counts[best] += 1;
            best
        })
        .collect();
    ModeAssignment { assignments, counts }
}
