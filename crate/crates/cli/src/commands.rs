use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use factorvar::quadrature::{DEFAULT_ORDER, MAX_ORDER};
use factorvar::var::BASIS_POINT;
use factorvar::{
    empirical_cdf, example_portfolio, greeks, simulate, solve_var, solve_var_newton, Format,
    LossDistribution, McConfig, Portfolio, QuadratureGrid, VarResult,
};

use crate::output::emit;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] factorvar::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use factorvar::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 5,
            CliError::Core(e) => match e {
                E::InvalidLoan { .. } | E::InvalidPortfolio(_) | E::Parse { .. } => 3,
                E::NoRoot { .. } | E::DegenerateDenominator { .. } => 4,
                E::Io(_) => 5,
                _ => 2,
            },
        }
    }

    /// True when stdout was closed early by the reader, e.g. `| head`.
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Io { source, .. } if source.kind() == io::ErrorKind::BrokenPipe)
    }
}

fn io_context(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn core_to_io(e: factorvar::Error) -> io::Error {
    match e {
        factorvar::Error::Io(e) => e,
        other => io::Error::other(other.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "factorvar",
    version,
    about = "Loss distribution, VaR and VaR sensitivities in the Gaussian factor model"
)]
pub struct Cli {
    /// Maximum number of worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the loss CDF on a grid of loss levels
    Cdf(CdfArgs),
    /// Solve for VaR and economic capital
    Var(VarArgs),
    /// VaR sensitivities to every loan parameter and to the confidence level
    Greeks(GreeksArgs),
    /// Compare the analytic CDF with a Monte Carlo simulation
    McCheck(McCheckArgs),
    /// Write the built-in 125-loan test portfolio
    ExamplePortfolio(ExampleArgs),
}

#[derive(Debug, Args)]
struct PortfolioArgs {
    /// Portfolio file (CSV or JSON)
    #[arg(long, required_unless_present = "example", conflicts_with = "example")]
    portfolio: Option<PathBuf>,
    /// Use the built-in 125-loan test portfolio
    #[arg(long)]
    example: bool,
    /// Input format; inferred from the file extension when omitted
    #[arg(long)]
    input_format: Option<Format>,
    /// Gauss-Hermite nodes per factor
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    quad_order: usize,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Confidence level
    #[arg(long, default_value_t = 0.9975)]
    q: f64,
    /// Solver tolerance in basis points of portfolio notional
    #[arg(long, default_value_t = 1.0)]
    tol_bp: f64,
    /// Use safeguarded Newton iteration instead of bisection
    #[arg(long)]
    newton: bool,
}

#[derive(Debug, Args)]
struct CdfArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    /// Loss grid as start:end:points
    #[arg(long, default_value = "0:0.30:200")]
    grid: GridSpec,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct VarArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GreeksArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct McCheckArgs {
    #[command(flatten)]
    portfolio: PortfolioArgs,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    antithetic: bool,
    /// Loss levels to check (repeatable); defaults to the solved VaR
    #[arg(long = "x")]
    xs: Vec<f64>,
    /// Table of the checks as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Empirical CDF curve as CSV
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// Loss grid for --curve-out as start:end:points
    #[arg(long, default_value = "0:0.30:200")]
    grid: GridSpec,
}

#[derive(Debug, Args)]
struct ExampleArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; inferred from the file extension when omitted
    #[arg(long)]
    format: Option<Format>,
}

/// Evenly spaced loss levels, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    start: f64,
    end: f64,
    points: usize,
}

impl GridSpec {
    fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.end
                } else {
                    self.start + step * i as f64
                }
            })
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, end, points] = parts[..] else {
            return Err(format!("expected start:end:points, got `{s}`"));
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        let (start, end) = (num(start)?, num(end)?);
        let points: usize = points
            .trim()
            .parse()
            .map_err(|e| format!("`{points}`: {e}"))?;
        if !(start.is_finite() && end.is_finite()) || start > end || points == 0 {
            return Err(format!("invalid grid `{s}`: need start <= end and points >= 1"));
        }
        Ok(GridSpec { start, end, points })
    }
}

fn infer_format(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
        _ => Format::Csv,
    })
}

impl PortfolioArgs {
    fn validate(&self) -> Result<(), CliError> {
        if self.quad_order == 0 || self.quad_order > MAX_ORDER {
            return Err(CliError::Usage(format!(
                "--quad-order must be in 1..={MAX_ORDER}, got {}",
                self.quad_order
            )));
        }
        Ok(())
    }

    fn load(&self) -> Result<Portfolio, CliError> {
        match &self.portfolio {
            None => Ok(example_portfolio()),
            Some(path) => {
                let file = File::open(path)
                    .map_err(io_context(format!("cannot open {}", path.display())))?;
                let format = infer_format(path, self.input_format);
                Ok(Portfolio::from_reader(BufReader::new(file), format)?)
            }
        }
    }

    fn grid(&self, portfolio: &Portfolio) -> Result<QuadratureGrid, CliError> {
        Ok(QuadratureGrid::normal(self.quad_order, portfolio.num_factors())?)
    }
}

impl SolveArgs {
    fn validate(&self) -> Result<(), CliError> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(CliError::Usage(format!("--q must lie in (0, 1), got {}", self.q)));
        }
        if !(self.tol_bp > 0.0 && self.tol_bp.is_finite()) {
            return Err(CliError::Usage(format!(
                "--tol-bp must be positive, got {}",
                self.tol_bp
            )));
        }
        Ok(())
    }

    fn solve(&self, dist: &LossDistribution<'_>) -> Result<VarResult, CliError> {
        let tol = self.tol_bp * BASIS_POINT;
        let result = if self.newton {
            // Seed from a coarse bisection.
            let coarse = solve_var(dist, self.q, (dist.portfolio().max_loss() / 16.0).max(tol))?;
            solve_var_newton(dist, self.q, tol, coarse.var)?
        } else {
            solve_var(dist, self.q, tol)?
        };
        Ok(result)
    }
}

fn summary_line(var: &VarResult, expected_loss: f64) -> String {
    format!(
        "VaR({:.2}%) = {:.2}%  economic capital = {:.2}%  expected loss = {:.2}%  ({} CDF evaluations)",
        var.confidence * 100.0,
        var.var_percent_bp(),
        var.economic_capital * 100.0,
        expected_loss * 100.0,
        var.evaluations
    )
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Cdf(args) => run_cdf(args),
        Command::Var(args) => run_var(args),
        Command::Greeks(args) => run_greeks(args),
        Command::McCheck(args) => run_mc_check(args),
        Command::ExamplePortfolio(args) => run_example(args),
    }
}

fn run_cdf(args: CdfArgs) -> Result<(), CliError> {
    args.portfolio.validate()?;
    let portfolio = args.portfolio.load()?;
    let grid = args.portfolio.grid(&portfolio)?;
    let dist = LossDistribution::new(&portfolio, &grid)?;
    let xs = args.grid.values();
    let cdf = dist.cdf_curve(&xs)?;

    #[derive(Serialize)]
    struct Curve<'a> {
        x: &'a [f64],
        cdf: &'a [f64],
    }

    emit(args.out.as_deref(), |w| match args.format {
        Format::Csv => factorvar::loss::write_curve_csv(w, &xs, &cdf).map_err(core_to_io),
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &Curve { x: &xs, cdf: &cdf })?;
            writeln!(w)
        }
    })
    .map_err(io_context("cannot write CDF curve"))?;

    if let Some(out) = &args.out {
        println!(
            "wrote {} CDF points over [{}, {}] to {}",
            xs.len(),
            args.grid.start,
            args.grid.end,
            out.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct VarOutput {
    var: f64,
    economic_capital: f64,
    confidence: f64,
    evaluations: usize,
}

fn run_var(args: VarArgs) -> Result<(), CliError> {
    args.portfolio.validate()?;
    args.solve.validate()?;
    let portfolio = args.portfolio.load()?;
    let grid = args.portfolio.grid(&portfolio)?;
    let dist = LossDistribution::new(&portfolio, &grid)?;
    let var = args.solve.solve(&dist)?;

    println!("{}", summary_line(&var, portfolio.expected_loss()));
    let output = VarOutput {
        var: var.var,
        economic_capital: var.economic_capital,
        confidence: var.confidence,
        evaluations: var.evaluations,
    };
    emit(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &output)?;
        writeln!(w)
    })
    .map_err(io_context("cannot write VaR result"))?;
    Ok(())
}

fn run_greeks(args: GreeksArgs) -> Result<(), CliError> {
    args.portfolio.validate()?;
    args.solve.validate()?;
    let portfolio = args.portfolio.load()?;
    let grid = args.portfolio.grid(&portfolio)?;
    let dist = LossDistribution::new(&portfolio, &grid)?;
    let var = args.solve.solve(&dist)?;
    let report = greeks(&dist, &var)?;

    if args.out.is_some() {
        println!("{}", summary_line(&var, portfolio.expected_loss()));
        println!("dVaR/dq = {}", report.d_var_d_q);
    }
    emit(args.out.as_deref(), |w| match args.format {
        Format::Csv => report.write_csv(w).map_err(core_to_io),
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)
        }
    })
    .map_err(io_context("cannot write Greeks"))?;
    Ok(())
}

fn run_mc_check(args: McCheckArgs) -> Result<(), CliError> {
    args.portfolio.validate()?;
    args.solve.validate()?;
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let portfolio = args.portfolio.load()?;
    let grid = args.portfolio.grid(&portfolio)?;
    let dist = LossDistribution::new(&portfolio, &grid)?;

    let xs = if args.xs.is_empty() {
        let var = args.solve.solve(&dist)?;
        println!("{}", summary_line(&var, portfolio.expected_loss()));
        vec![var.var]
    } else {
        args.xs.clone()
    };

    let cfg = McConfig {
        samples: args.samples,
        rng_seed: args.seed,
        antithetic: args.antithetic,
    };
    let mc = simulate(&portfolio, &cfg)?;
    println!(
        "{} samples (seed {}): mean loss {:.6} ± {:.6}, expected loss {:.6}",
        mc.sample_count,
        args.seed,
        mc.sample_mean,
        mc.mean_std_error(),
        portfolio.expected_loss()
    );

    let rows: Vec<(f64, f64, f64, f64)> = xs
        .iter()
        .map(|&x| {
            let e = empirical_cdf(&mc, x);
            (x, e.value, e.std_error, dist.cdf(x))
        })
        .collect();
    println!("{:>12} {:>12} {:>12} {:>12} {:>8}", "x", "mc_cdf", "std_error", "engine_cdf", "z");
    for &(x, v, se, c) in &rows {
        let z = if se > 0.0 { (v - c) / se } else { f64::NAN };
        println!("{x:>12.6} {v:>12.6} {se:>12.2e} {c:>12.6} {z:>8.2}");
    }

    if let Some(out) = &args.out {
        crate::output::write_atomic(out, |w| {
            writeln!(w, "x,mc_cdf,std_error,engine_cdf")?;
            for (x, v, se, c) in &rows {
                writeln!(w, "{x},{v},{se},{c}")?;
            }
            Ok(())
        })
        .map_err(io_context(format!("cannot write {}", out.display())))?;
    }
    if let Some(out) = &args.curve_out {
        let grid_xs = args.grid.values();
        crate::output::write_atomic(out, |w| {
            writeln!(w, "x,cdf")?;
            for x in &grid_xs {
                writeln!(w, "{x},{}", empirical_cdf(&mc, *x).value)?;
            }
            Ok(())
        })
        .map_err(io_context(format!("cannot write {}", out.display())))?;
    }
    Ok(())
}

fn run_example(args: ExampleArgs) -> Result<(), CliError> {
    let portfolio = example_portfolio();
    let format = match &args.out {
        Some(path) => infer_format(path, args.format),
        None => args.format.unwrap_or(Format::Csv),
    };
    emit(args.out.as_deref(), |w| {
        portfolio.to_writer(w, format).map_err(core_to_io)
    })
    .map_err(io_context("cannot write portfolio"))?;
    if let Some(out) = &args.out {
        println!("wrote {}-loan example portfolio to {}", portfolio.len(), out.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "0:0.30:200".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 200);
        assert_eq!((v[0], v[199]), (0.0, 0.30));
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!("0.1:0.1:1".parse::<GridSpec>().unwrap().values(), vec![0.1]);
        for bad in ["0:1", "1:0:5", "0:1:0", "a:1:3", "0:1:2:3"] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        use factorvar::Error as E;
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(E::InvalidPortfolio("x".into())).exit_code(), 3);
        assert_eq!(
            CliError::from(E::NoRoot { q: 0.1, low: 0.2, high: 1.0 }).exit_code(),
            4
        );
        assert_eq!(CliError::from(E::Io(io::Error::other("x"))).exit_code(), 5);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
