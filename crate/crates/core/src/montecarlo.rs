//! Direct simulation of the factor model, used to validate the analytic
//! approximation.
//!
//! Samples are generated in fixed-size blocks. Block `b` draws from a ChaCha8
//! stream keyed by (seed, b), so results do not depend on how many worker
//! threads process the blocks.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::conditional_argument;
use crate::normal;
use crate::portfolio::Portfolio;

const BLOCK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: usize,
    pub rng_seed: u64,
    /// Pair every draw with its mirror image (all normals negated).
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(samples: usize, rng_seed: u64) -> Self {
        McConfig {
            samples,
            rng_seed,
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    /// Realized portfolio losses, ascending.
    pub losses: Vec<f64>,
    pub sample_mean: f64,
    pub sample_count: usize,
    /// Number of samples in which each loan defaulted.
    pub default_counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalCdf {
    pub value: f64,
    /// Binomial standard error √(p̂(1 − p̂)/n).
    pub std_error: f64,
}

impl McResult {
    /// Standard error of `sample_mean`.
    pub fn mean_std_error(&self) -> f64 {
        let n = self.sample_count as f64;
        let var = self
            .losses
            .iter()
            .map(|l| (l - self.sample_mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }

    pub fn default_frequency(&self, i: usize) -> f64 {
        self.default_counts[i] as f64 / self.sample_count as f64
    }
}

/// Uniform on the open unit interval; `1 - u` of the result is exact.
#[inline]
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

struct Block {
    losses: Vec<f64>,
    default_counts: Vec<u64>,
}

fn simulate_block(portfolio: &Portfolio, cfg: &McConfig, block: usize) -> Block {
    let start = block * BLOCK;
    let count = BLOCK.min(cfg.samples - start);
    let m = portfolio.num_factors();
    let n = portfolio.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(block as u64);

    let mut losses = Vec::with_capacity(count);
    let mut default_counts = vec![0u64; n];
    let mut uniforms = vec![0.0; m + n];
    let mut factors = vec![0.0; m];

    let mut draw = |uniforms: &[f64], losses: &mut Vec<f64>, counts: &mut [u64]| {
        for (f, &u) in factors.iter_mut().zip(&uniforms[..m]) {
            *f = normal::inv_cdf(u).expect("open uniform");
        }
        let mut loss = 0.0;
        for (i, ((loan, d), &u)) in portfolio
            .loans()
            .iter()
            .zip(portfolio.derived())
            .zip(&uniforms[m..])
            .enumerate()
        {
            // w·φ + s·Φ⁻¹(u) < Φ⁻¹(p)  ⇔  u < Φ((Φ⁻¹(p) − w·φ)/s)
            let cond = normal::cdf(conditional_argument(d.threshold, d.idio_scale, &loan.loadings, &factors));
            if u < cond {
                loss += d.lgd;
                counts[i] += 1;
            }
        }
        losses.push(loss);
    };

    let mut remaining = count;
    while remaining > 0 {
        for u in uniforms.iter_mut() {
            *u = open_uniform(&mut rng);
        }
        draw(&uniforms, &mut losses, &mut default_counts);
        remaining -= 1;
        if cfg.antithetic && remaining > 0 {
            for u in uniforms.iter_mut() {
                *u = 1.0 - *u;
            }
            draw(&uniforms, &mut losses, &mut default_counts);
            remaining -= 1;
        }
    }

    Block {
        losses,
        default_counts,
    }
}

/// Simulates `cfg.samples` portfolio losses.
pub fn simulate(portfolio: &Portfolio, cfg: &McConfig) -> Result<McResult> {
    if cfg.samples == 0 {
        return Err(Error::NoSamples);
    }
    let blocks = cfg.samples.div_ceil(BLOCK);
    let results: Vec<Block> = (0..blocks)
        .into_par_iter()
        .map(|b| simulate_block(portfolio, cfg, b))
        .collect();

    let mut losses = Vec::with_capacity(cfg.samples);
    let mut default_counts = vec![0u64; portfolio.len()];
    for block in results {
        losses.extend_from_slice(&block.losses);
        for (c, b) in default_counts.iter_mut().zip(&block.default_counts) {
            *c += b;
        }
    }
    let sample_mean = losses.iter().sum::<f64>() / losses.len() as f64;
    losses.par_sort_unstable_by(f64::total_cmp);

    Ok(McResult {
        losses,
        sample_mean,
        sample_count: cfg.samples,
        default_counts,
    })
}

/// Fraction of simulated losses at or below `x`.
pub fn empirical_cdf(result: &McResult, x: f64) -> EmpiricalCdf {
    let below = result.losses.partition_point(|&l| l <= x);
    let n = result.losses.len() as f64;
    let value = below as f64 / n;
    EmpiricalCdf {
        value,
        std_error: (value * (1.0 - value) / n).sqrt(),
    }
}
