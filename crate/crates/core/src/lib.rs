//! Loss distribution, Value-at-Risk, economic capital and VaR sensitivities
//! for loan portfolios in the Gaussian m-factor default model.
//!
//! Loan i defaults when w_i·φ + √(1 − |w_i|²)·ε_i < Φ⁻¹(p_i), with common
//! factors φ ~ N(0, I_m) and idiosyncratic ε_i ~ N(0, 1). Conditional on φ the
//! portfolio loss is approximated by a normal with matching moments, and the
//! unconditional CDF is integrated over φ by Gauss-Hermite quadrature.
//!
//! ```
//! use factorvar::{example_portfolio, solve_var, LossDistribution, QuadratureGrid};
//!
//! let portfolio = example_portfolio();
//! let grid = QuadratureGrid::normal(factorvar::quadrature::DEFAULT_ORDER, 1)?;
//! let dist = LossDistribution::new(&portfolio, &grid)?;
//! let var = solve_var(&dist, 0.9975, 1e-4)?;
//! assert_eq!(var.var_percent_bp(), 16.36);
//! # Ok::<(), factorvar::Error>(())
//! ```

pub mod error;
pub mod greeks;
pub mod loss;
pub mod montecarlo;
pub mod normal;
pub mod portfolio;
pub mod quadrature;
pub mod var;

pub use error::{Error, Result};
pub use greeks::{cdf_param_derivative, cdf_x_derivative, greeks, GreeksReport, Param};
pub use loss::{cond_default_prob, cond_moments, ConditionalMoments, LossDistribution};
pub use montecarlo::{empirical_cdf, simulate, EmpiricalCdf, McConfig, McResult};
pub use portfolio::{example_portfolio, Format, Loan, Portfolio};
pub use quadrature::{gauss_hermite, QuadratureGrid};
pub use var::{solve_var, solve_var_newton, VarResult};
