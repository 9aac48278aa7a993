//! VaR sensitivities by implicit differentiation of F(VaR; θ) = q.
//!
//! For any model parameter θ, ∂VaR/∂θ = −(∂F/∂θ) / (∂F/∂x) at x = VaR, and
//! ∂VaR/∂q = 1 / (∂F/∂x). Both integrals are evaluated on the same
//! quadrature grid as the CDF. The per-node integrand derivative goes
//! through the conditional moments:
//!
//! ∂Φ((x−E)/σ)/∂θ = −ρ(z)/σ · ∂E/∂θ − ρ(z)·z/(2V) · ∂V/∂θ,  z = (x−E)/σ.
//!
//! Notional sensitivities differentiate through every fraction f_j = N_j/ΣN,
//! so Σ_i N_i ∂VaR/∂N_i = 0.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{conditional_argument, LossDistribution};
use crate::normal;
use crate::var::VarResult;

/// Below this the CDF is treated as flat and VaR is not differentiable.
pub const MIN_DENSITY: f64 = 1e-300;

/// Nodes per reduction chunk. Fixed so summation order never depends on
/// the number of worker threads.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Notional(usize),
    DefaultProb(usize),
    /// (loan, factor)
    Loading(usize, usize),
    Recovery(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreeksReport {
    pub d_var_d_notional: Vec<f64>,
    pub d_var_d_pd: Vec<f64>,
    /// `d_var_d_loading[i][k]` is ∂VaR/∂w_{i,k}.
    pub d_var_d_loading: Vec<Vec<f64>>,
    pub d_var_d_recovery: Vec<f64>,
    pub d_var_d_q: f64,
    pub var_used: f64,
    /// ∂F/∂x at `var_used`.
    pub denominator: f64,
}

/// ∂F/∂x, the approximate loss density.
pub fn cdf_x_derivative(dist: &LossDistribution<'_>, x: f64) -> f64 {
    dist.density(x)
}

/// Sensitivities of the integrand at one node with respect to the
/// conditional mean and variance, (∂Φ/∂E, ∂Φ/∂V). Zero for degenerate nodes.
#[inline]
fn moment_sensitivities(x: f64, mean: f64, variance: f64) -> Option<(f64, f64)> {
    if variance <= 0.0 {
        return None;
    }
    let sigma = variance.sqrt();
    let z = (x - mean) / sigma;
    let rho = normal::pdf(z);
    Some((-rho / sigma, -rho * z / (2.0 * variance)))
}

/// ∂F/∂θ at `x` for a single parameter.
pub fn cdf_param_derivative(dist: &LossDistribution<'_>, x: f64, param: Param) -> Result<f64> {
    let portfolio = dist.portfolio();
    let (i, factor) = match param {
        Param::Notional(i) | Param::DefaultProb(i) | Param::Recovery(i) => (i, None),
        Param::Loading(i, k) => (i, Some(k)),
    };
    let loan = portfolio.loan(i)?;
    if let Some(k) = factor {
        if k >= portfolio.num_factors() {
            return Err(Error::InvalidParameter(format!(
                "factor {k} out of range for {} factors",
                portfolio.num_factors()
            )));
        }
    }
    let d = &portfolio.derived()[i];
    let total = portfolio.total_notional();
    let threshold_density = normal::pdf(d.threshold);

    let mut sum = 0.0;
    for ((node, w), m) in dist.grid().iter().zip(dist.moments()) {
        let Some((d_mean, d_var)) = moment_sensitivities(x, m.mean, m.variance) else {
            continue;
        };
        let a = conditional_argument(d.threshold, d.idio_scale, &loan.loadings, node);
        let p = normal::cdf(a);
        let (de, dv) = match param {
            Param::Notional(_) => (
                ((1.0 - loan.recovery) * p - m.mean) / total,
                (2.0 * d.fraction * (1.0 - loan.recovery).powi(2) * p * (1.0 - p)
                    - 2.0 * m.variance)
                    / total,
            ),
            Param::DefaultProb(_) => {
                let dp = normal::pdf(a) / (d.idio_scale * threshold_density);
                (d.lgd * dp, d.lgd * d.lgd * (1.0 - 2.0 * p) * dp)
            }
            Param::Loading(_, k) => {
                let s = d.idio_scale;
                let da = -node[k] / s + a * loan.loadings[k] / (s * s);
                let dp = normal::pdf(a) * da;
                (d.lgd * dp, d.lgd * d.lgd * (1.0 - 2.0 * p) * dp)
            }
            Param::Recovery(_) => (
                -d.fraction * p,
                -2.0 * d.lgd * d.fraction * p * (1.0 - p),
            ),
        };
        sum += w * (d_mean * de + d_var * dv);
    }
    Ok(sum)
}

/// All ∂F/∂θ numerators at `x` in one sweep over the grid.
///
/// Returns a flat vector with stride `m + 3` per loan laid out as
/// `[notional, pd, recovery, w_1..w_m]`.
fn all_param_derivatives(dist: &LossDistribution<'_>, x: f64) -> Vec<f64> {
    let portfolio = dist.portfolio();
    let grid = dist.grid();
    let m = portfolio.num_factors();
    let stride = m + 3;
    let n_loans = portfolio.len();
    let total = portfolio.total_notional();
    let threshold_density: Vec<f64> = portfolio
        .derived()
        .iter()
        .map(|d| normal::pdf(d.threshold))
        .collect();

    let chunk_sum = |chunk: usize| {
        let mut acc = vec![0.0; n_loans * stride];
        let end = ((chunk + 1) * CHUNK).min(grid.len());
        for node_index in chunk * CHUNK..end {
            let mom = dist.moments()[node_index];
            let Some((d_mean, d_var)) = moment_sensitivities(x, mom.mean, mom.variance) else {
                continue;
            };
            let w = grid.weight(node_index);
            let (gm, gv) = (w * d_mean, w * d_var);
            let node = grid.node(node_index);
            for (i, (loan, d)) in portfolio.loans().iter().zip(portfolio.derived()).enumerate() {
                let slot = &mut acc[i * stride..(i + 1) * stride];
                let a = conditional_argument(d.threshold, d.idio_scale, &loan.loadings, node);
                let p = normal::cdf(a);
                let rho_a = normal::pdf(a);
                let recovered = 1.0 - loan.recovery;
                let bernoulli = p * (1.0 - p);
                let lgd_sq_slope = d.lgd * d.lgd * (1.0 - 2.0 * p);

                slot[0] += gm * (recovered * p - mom.mean) / total
                    + gv * (2.0 * d.fraction * recovered * recovered * bernoulli
                        - 2.0 * mom.variance)
                        / total;

                let dp = rho_a / (d.idio_scale * threshold_density[i]);
                slot[1] += gm * d.lgd * dp + gv * lgd_sq_slope * dp;

                slot[2] += gm * (-d.fraction * p) + gv * (-2.0 * d.lgd * d.fraction * bernoulli);

                let s = d.idio_scale;
                for k in 0..m {
                    let da = -node[k] / s + a * loan.loadings[k] / (s * s);
                    let dp = rho_a * da;
                    slot[3 + k] += gm * d.lgd * dp + gv * lgd_sq_slope * dp;
                }
            }
        }
        acc
    };

    let chunks = grid.len().div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks).into_par_iter().map(chunk_sum).collect();
    let mut total_acc = vec![0.0; n_loans * stride];
    for partial in &partials {
        for (t, p) in total_acc.iter_mut().zip(partial) {
            *t += p;
        }
    }
    total_acc
}

/// Every first-order VaR sensitivity at the solved VaR.
pub fn greeks(dist: &LossDistribution<'_>, var: &VarResult) -> Result<GreeksReport> {
    let x = var.var;
    let denominator = cdf_x_derivative(dist, x);
    if denominator.is_nan() || denominator <= MIN_DENSITY {
        return Err(Error::DegenerateDenominator {
            x,
            density: denominator,
        });
    }

    let m = dist.portfolio().num_factors();
    let stride = m + 3;
    let numerators = all_param_derivatives(dist, x);
    let implicit = |num: f64| -num / denominator;

    let per_loan = numerators.chunks_exact(stride);
    Ok(GreeksReport {
        d_var_d_notional: per_loan.clone().map(|s| implicit(s[0])).collect(),
        d_var_d_pd: per_loan.clone().map(|s| implicit(s[1])).collect(),
        d_var_d_recovery: per_loan.clone().map(|s| implicit(s[2])).collect(),
        d_var_d_loading: per_loan
            .map(|s| s[3..].iter().map(|&v| implicit(v)).collect())
            .collect(),
        d_var_d_q: 1.0 / denominator,
        var_used: x,
        denominator,
    })
}

impl GreeksReport {
    pub fn get(&self, param: Param) -> Option<f64> {
        match param {
            Param::Notional(i) => self.d_var_d_notional.get(i).copied(),
            Param::DefaultProb(i) => self.d_var_d_pd.get(i).copied(),
            Param::Recovery(i) => self.d_var_d_recovery.get(i).copied(),
            Param::Loading(i, k) => self.d_var_d_loading.get(i).and_then(|r| r.get(k)).copied(),
        }
    }

    /// CSV with columns `loan_index,d_notional,d_pd,d_recovery,d_w1..d_wm`
    /// and a final `d_q` row carrying ∂VaR/∂q in the second column.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let m = self.d_var_d_loading.first().map_or(0, Vec::len);
        let mut header = String::from("loan_index,d_notional,d_pd,d_recovery");
        for k in 1..=m {
            header.push_str(&format!(",d_w{k}"));
        }
        writeln!(writer, "{header}")?;
        for i in 0..self.d_var_d_notional.len() {
            write!(
                writer,
                "{i},{},{},{}",
                self.d_var_d_notional[i], self.d_var_d_pd[i], self.d_var_d_recovery[i]
            )?;
            for v in &self.d_var_d_loading[i] {
                write!(writer, ",{v}")?;
            }
            writeln!(writer)?;
        }
        writeln!(writer, "d_q,{}{}", self.d_var_d_q, ",".repeat(m + 2))?;
        writer.flush()?;
        Ok(())
    }
}
