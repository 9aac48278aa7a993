//! Value-at-Risk as the root of F(x) = q, and economic capital.
//!
//! The search bracket is [0, Σ lgd_i]. Bisection to width `tol_x` takes
//! ceil(log2(Σ lgd / tol_x)) CDF evaluations. An endpoint is evaluated only
//! when every midpoint fell on the same side of the root.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::LossDistribution;

/// One basis point of portfolio notional.
pub const BASIS_POINT: f64 = 1e-4;

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarResult {
    /// Loss level as a fraction of total notional.
    pub var: f64,
    /// `var` minus the unconditional expected loss.
    pub economic_capital: f64,
    pub confidence: f64,
    /// Number of CDF evaluations, including any bracket endpoint checks.
    pub evaluations: usize,
    pub converged: bool,
}

impl VarResult {
    fn new(dist: &LossDistribution<'_>, var: f64, q: f64, evaluations: usize, converged: bool) -> Self {
        VarResult {
            var,
            economic_capital: var - dist.portfolio().expected_loss(),
            confidence: q,
            evaluations,
            converged,
        }
    }

    /// VaR in percent, rounded to the nearest basis point.
    pub fn var_percent_bp(&self) -> f64 {
        (self.var / BASIS_POINT).round() / 100.0
    }
}

#[derive(Clone, Copy)]
struct Bracket {
    lo: f64,
    hi: f64,
}

fn check_inputs(dist: &LossDistribution<'_>, q: f64, tol_x: f64) -> Result<Bracket> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain { value: q });
    }
    if !(tol_x > 0.0 && tol_x.is_finite()) {
        return Err(Error::InvalidTolerance(tol_x));
    }
    Ok(Bracket {
        lo: 0.0,
        hi: dist.portfolio().max_loss(),
    })
}

fn no_root(dist: &LossDistribution<'_>, q: f64, bracket: &Bracket) -> Error {
    Error::NoRoot {
        q,
        low: dist.cdf(bracket.lo),
        high: dist.cdf(bracket.hi),
    }
}

/// Checks F(lo) ≤ q ≤ F(hi) with two evaluations.
fn checked_bracket(dist: &LossDistribution<'_>, q: f64, tol_x: f64) -> Result<Bracket> {
    let bracket = check_inputs(dist, q, tol_x)?;
    if q < dist.cdf(bracket.lo) || q > dist.cdf(bracket.hi) {
        return Err(no_root(dist, q, &bracket));
    }
    Ok(bracket)
}

/// Solves F(x) = q by bisection and returns the midpoint of the final
/// bracket, which has width ≤ `tol_x`.
pub fn solve_var(dist: &LossDistribution<'_>, q: f64, tol_x: f64) -> Result<VarResult> {
    let initial = check_inputs(dist, q, tol_x)?;
    let Bracket { mut lo, mut hi } = initial;
    let mut evaluations = 0;
    let mut converged = true;
    while hi - lo > tol_x {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Tolerance below floating-point resolution of the bracket.
            converged = false;
            break;
        }
        evaluations += 1;
        if dist.cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // An endpoint that never moved was never shown to bound the root.
    if lo == initial.lo {
        evaluations += 1;
        if q < dist.cdf(lo) {
            return Err(no_root(dist, q, &initial));
        }
    }
    if hi == initial.hi {
        evaluations += 1;
        if q > dist.cdf(hi) {
            return Err(no_root(dist, q, &initial));
        }
    }
    Ok(VarResult::new(dist, 0.5 * (lo + hi), q, evaluations, converged))
}

/// Safeguarded Newton iteration on F(x) − q starting from `seed`, using the
/// analytic density as derivative. A step that leaves the current bracket,
/// or a vanishing density, falls back to bisection.
pub fn solve_var_newton(
    dist: &LossDistribution<'_>,
    q: f64,
    tol_x: f64,
    seed: f64,
) -> Result<VarResult> {
    let Bracket { mut lo, mut hi } = checked_bracket(dist, q, tol_x)?;
    let mut evaluations = 2;
    let mut x = if seed > lo && seed < hi { seed } else { 0.5 * (lo + hi) };

    for _ in 0..MAX_ITERATIONS {
        let (f, density) = dist.cdf_and_density(x);
        evaluations += 1;
        let g = f - q;
        if g == 0.0 {
            return Ok(VarResult::new(dist, x, q, evaluations, true));
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }

        let newton = x - g / density;
        let next = if density > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= tol_x || hi - lo <= tol_x {
            return Ok(VarResult::new(dist, next, q, evaluations, true));
        }
        x = next;
    }
    Ok(VarResult::new(dist, x, q, evaluations, false))
}
