//! Conditional-normal approximation of the portfolio loss distribution.
//!
//! Given the common factors φ, loans default independently with probability
//! p^i(φ) = Φ((Φ⁻¹(p_i) − w_i·φ) / √(1 − |w_i|²)). The conditional loss is
//! replaced by a normal with the matching mean and variance, and the
//! unconditional CDF is the quadrature average of those normal CDFs.
//!
//! No truncation is applied: the approximating normals leak a little mass
//! below 0 and above the maximal loss, so `cdf(0.0)` is generally positive.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normal;
use crate::portfolio::{Derived, Loan, Portfolio};
use crate::quadrature::QuadratureGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub variance: f64,
}

impl ConditionalMoments {
    /// CDF of the approximating normal at `x`; a step at the mean when the
    /// variance vanishes.
    #[inline]
    pub fn normal_cdf(&self, x: f64) -> f64 {
        if self.variance > 0.0 {
            normal::cdf((x - self.mean) / self.variance.sqrt())
        } else if x >= self.mean {
            1.0
        } else {
            0.0
        }
    }

    /// Density of the approximating normal at `x`; zero for a degenerate node.
    #[inline]
    pub fn normal_pdf(&self, x: f64) -> f64 {
        if self.variance > 0.0 {
            let sigma = self.variance.sqrt();
            normal::pdf((x - self.mean) / sigma) / sigma
        } else {
            0.0
        }
    }
}

/// Default probability of `loan` conditional on the common factors.
pub fn cond_default_prob(loan: &Loan, factors: &[f64]) -> Result<f64> {
    if factors.len() != loan.loadings.len() {
        return Err(Error::FactorDimension {
            expected: loan.loadings.len(),
            got: factors.len(),
        });
    }
    let threshold = normal::inv_cdf(loan.default_prob)?;
    let scale = (1.0 - loan.systematic_variance()).sqrt();
    Ok(normal::cdf(conditional_argument(
        threshold,
        scale,
        &loan.loadings,
        factors,
    )))
}

/// (Φ⁻¹(p) − w·φ) / √(1 − |w|²)
#[inline]
pub(crate) fn conditional_argument(threshold: f64, scale: f64, loadings: &[f64], factors: &[f64]) -> f64 {
    let systematic: f64 = loadings.iter().zip(factors).map(|(w, f)| w * f).sum();
    (threshold - systematic) / scale
}

/// Conditional mean and variance of the portfolio loss given the factors.
pub fn cond_moments(portfolio: &Portfolio, factors: &[f64]) -> Result<ConditionalMoments> {
    if factors.len() != portfolio.num_factors() {
        return Err(Error::FactorDimension {
            expected: portfolio.num_factors(),
            got: factors.len(),
        });
    }
    Ok(node_moments(portfolio, factors))
}

pub(crate) fn node_moments(portfolio: &Portfolio, factors: &[f64]) -> ConditionalMoments {
    let mut mean = 0.0;
    let mut variance = 0.0;
    for (loan, d) in portfolio.loans().iter().zip(portfolio.derived()) {
        let p = loan_cond_prob(loan, d, factors);
        mean += d.lgd * p;
        variance += d.lgd * d.lgd * p * (1.0 - p);
    }
    ConditionalMoments { mean, variance }
}

#[inline]
pub(crate) fn loan_cond_prob(loan: &Loan, d: &Derived, factors: &[f64]) -> f64 {
    normal::cdf(conditional_argument(d.threshold, d.idio_scale, &loan.loadings, factors))
}

/// The approximate unconditional loss distribution of a portfolio on a
/// quadrature grid. Per-node conditional moments are computed once here;
/// each CDF evaluation is then a single pass over the grid.
#[derive(Debug, Clone)]
pub struct LossDistribution<'a> {
    portfolio: &'a Portfolio,
    grid: &'a QuadratureGrid,
    moments: Vec<ConditionalMoments>,
}

impl<'a> LossDistribution<'a> {
    pub fn new(portfolio: &'a Portfolio, grid: &'a QuadratureGrid) -> Result<Self> {
        if grid.dims() != portfolio.num_factors() {
            return Err(Error::FactorDimension {
                expected: portfolio.num_factors(),
                got: grid.dims(),
            });
        }
        let moments = (0..grid.len())
            .into_par_iter()
            .map(|i| node_moments(portfolio, grid.node(i)))
            .collect();
        Ok(LossDistribution {
            portfolio,
            grid,
            moments,
        })
    }

    pub fn portfolio(&self) -> &'a Portfolio {
        self.portfolio
    }

    pub fn grid(&self) -> &'a QuadratureGrid {
        self.grid
    }

    /// Cached conditional moments, one per grid node.
    pub fn moments(&self) -> &[ConditionalMoments] {
        &self.moments
    }

    /// Approximate P(L ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.moments)
            .map(|(w, m)| w * m.normal_cdf(x))
            .sum()
    }

    /// d/dx of [`cdf`](Self::cdf).
    pub fn density(&self, x: f64) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.moments)
            .map(|(w, m)| w * m.normal_pdf(x))
            .sum()
    }

    /// CDF and its x-derivative in one pass.
    pub fn cdf_and_density(&self, x: f64) -> (f64, f64) {
        self.grid
            .weights()
            .iter()
            .zip(&self.moments)
            .fold((0.0, 0.0), |(c, d), (w, m)| {
                (c + w * m.normal_cdf(x), d + w * m.normal_pdf(x))
            })
    }

    /// Evaluates the CDF on ascending points.
    pub fn cdf_curve(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = xs.windows(2).position(|p| p[0].is_nan() || p[1].is_nan() || p[0] > p[1]) {
            return Err(Error::NotAscending(i + 1));
        }
        Ok(xs.iter().map(|&x| self.cdf(x)).collect())
    }

    /// Quadrature estimate of E[L], the weighted average of node means.
    pub fn mean(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.moments)
            .map(|(w, m)| w * m.mean)
            .sum()
    }
}

/// Writes a CDF curve as CSV with columns `x,cdf`.
pub fn write_curve_csv<W: Write>(mut writer: W, xs: &[f64], cdf: &[f64]) -> Result<()> {
    writeln!(writer, "x,cdf")?;
    for (x, c) in xs.iter().zip(cdf) {
        writeln!(writer, "{x},{c}")?;
    }
    writer.flush()?;
    Ok(())
}
