//! Loan portfolio data model, validation and file formats.
//!
//! CSV layout: header `notional,pd,recovery,w1,...,wm`, one loan per row.
//! JSON layout: `{"loans": [{"notional", "pd", "recovery", "loadings": [...]}]}`.
//! Row order is loan index order; indices are 0-based everywhere.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Loans are rejected when the idiosyncratic variance 1 − Σw² falls below this.
pub const MIN_IDIOSYNCRATIC_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loan {
    /// Notional in currency units.
    pub notional: f64,
    /// Unconditional default probability.
    #[serde(rename = "pd")]
    pub default_prob: f64,
    /// Recovery rate as a fraction of notional.
    pub recovery: f64,
    /// Factor loadings, one per common factor.
    pub loadings: Vec<f64>,
}

impl Loan {
    pub fn new(notional: f64, default_prob: f64, recovery: f64, loadings: Vec<f64>) -> Self {
        Loan {
            notional,
            default_prob,
            recovery,
            loadings,
        }
    }

    /// Σ_k w_k²
    pub fn systematic_variance(&self) -> f64 {
        self.loadings.iter().map(|w| w * w).sum()
    }

    fn check(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidLoan { index, reason });
        if !(self.notional.is_finite() && self.notional > 0.0) {
            return fail(format!("notional must be positive, got {}", self.notional));
        }
        if !(self.default_prob > 0.0 && self.default_prob < 1.0) {
            return fail(format!(
                "default probability must lie in (0, 1), got {}",
                self.default_prob
            ));
        }
        if !(self.recovery >= 0.0 && self.recovery < 1.0) {
            return fail(format!("recovery must lie in [0, 1), got {}", self.recovery));
        }
        if let Some(w) = self.loadings.iter().find(|w| !w.is_finite()) {
            return fail(format!("non-finite loading {w}"));
        }
        let sys = self.systematic_variance();
        if 1.0 - sys < MIN_IDIOSYNCRATIC_VARIANCE {
            return fail(format!("sum of squared loadings must be < 1, got {sys}"));
        }
        Ok(())
    }
}

/// Per-loan quantities derived once at construction.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Derived {
    pub fraction: f64,
    pub lgd: f64,
    /// Φ⁻¹(p_i)
    pub threshold: f64,
    /// √(1 − Σw²)
    pub idio_scale: f64,
}

/// An immutable, validated set of loans sharing a common factor count.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    loans: Vec<Loan>,
    num_factors: usize,
    total_notional: f64,
    derived: Vec<Derived>,
}

impl Portfolio {
    pub fn new(loans: Vec<Loan>) -> Result<Self> {
        let first = loans
            .first()
            .ok_or_else(|| Error::InvalidPortfolio("portfolio has no loans".into()))?;
        let num_factors = first.loadings.len();
        if num_factors == 0 {
            return Err(Error::InvalidPortfolio(
                "loans need at least one factor loading".into(),
            ));
        }
        for (index, loan) in loans.iter().enumerate() {
            if loan.loadings.len() != num_factors {
                return Err(Error::InvalidLoan {
                    index,
                    reason: format!(
                        "has {} loadings, expected {num_factors}",
                        loan.loadings.len()
                    ),
                });
            }
            loan.check(index)?;
        }

        let total_notional: f64 = loans.iter().map(|l| l.notional).sum();
        let derived = loans
            .iter()
            .map(|loan| {
                let fraction = loan.notional / total_notional;
                Derived {
                    fraction,
                    lgd: fraction * (1.0 - loan.recovery),
                    threshold: normal::inv_cdf(loan.default_prob)
                        .expect("default probability validated in (0, 1)"),
                    idio_scale: (1.0 - loan.systematic_variance()).sqrt(),
                }
            })
            .collect();

        Ok(Portfolio {
            loans,
            num_factors,
            total_notional,
            derived,
        })
    }

    pub fn loans(&self) -> &[Loan] {
        &self.loans
    }

    pub fn loan(&self, i: usize) -> Result<&Loan> {
        self.loans.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.loans.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.loans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loans.is_empty()
    }

    pub fn num_factors(&self) -> usize {
        self.num_factors
    }

    pub fn total_notional(&self) -> f64 {
        self.total_notional
    }

    pub(crate) fn derived(&self) -> &[Derived] {
        &self.derived
    }

    /// Share of total notional carried by loan `i`, N_i / Σ_j N_j.
    pub fn fraction(&self, i: usize) -> Result<f64> {
        self.loan(i)?;
        Ok(self.derived[i].fraction)
    }

    /// Loss given default of loan `i` as a fraction of total notional.
    pub fn lgd(&self, i: usize) -> Result<f64> {
        self.loan(i)?;
        Ok(self.derived[i].lgd)
    }

    /// Largest attainable portfolio loss, Σ_i lgd_i.
    pub fn max_loss(&self) -> f64 {
        self.derived.iter().map(|d| d.lgd).sum()
    }

    /// Unconditional expected loss Σ_i f_i (1 − r_i) p_i.
    pub fn expected_loss(&self) -> f64 {
        self.loans
            .iter()
            .zip(&self.derived)
            .map(|(loan, d)| d.lgd * loan.default_prob)
            .sum()
    }

    /// Returns a copy with `f` applied to each loan, revalidated.
    pub fn map_loans<F>(&self, f: F) -> Result<Portfolio>
    where
        F: FnMut((usize, &Loan)) -> Loan,
    {
        Portfolio::new(self.loans.iter().enumerate().map(f).collect())
    }

    pub fn from_reader<R: Read>(reader: R, format: Format) -> Result<Self> {
        match format {
            Format::Csv => read_csv(reader),
            Format::Json => read_json(reader),
        }
    }

    pub fn to_writer<W: Write>(&self, writer: W, format: Format) -> Result<()> {
        match format {
            Format::Csv => write_csv(self, writer),
            Format::Json => write_json(self, writer),
        }
    }
}

/// The 125-name single-factor test portfolio with linear ramps in default
/// probability, recovery and loading.
///
/// With the 1-based loan number i = 1..=125:
/// p_i = 0.015 + 0.05 (i−1)/(N−1), r_i = w_i = 0.5 − 0.1 (i−1)/(N−1).
/// Loan number i is stored at index i − 1. Every notional is 1.
pub fn example_portfolio() -> Portfolio {
    const N: usize = 125;
    let loans = (1..=N)
        .map(|i| {
            let t = (i - 1) as f64 / (N - 1) as f64;
            let ramp = 0.5 - 0.1 * t;
            Loan::new(1.0, 0.015 + 0.05 * t, ramp, vec![ramp])
        })
        .collect();
    Portfolio::new(loans).expect("example portfolio is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PortfolioFile {
    loans: Vec<Loan>,
}

fn read_json<R: Read>(reader: R) -> Result<Portfolio> {
    let file: PortfolioFile = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        record: e.line(),
        message: e.to_string(),
    })?;
    Portfolio::new(file.loans)
}

fn write_json<W: Write>(portfolio: &Portfolio, writer: W) -> Result<()> {
    let file = PortfolioFile {
        loans: portfolio.loans.clone(),
    };
    serde_json::to_writer_pretty(writer, &file).map_err(std::io::Error::from)?;
    Ok(())
}

fn csv_error(record: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            record,
            message: format!("{kind:?}"),
        },
    }
}

fn read_csv<R: Read>(reader: R) -> Result<Portfolio> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(0, e))?.clone();
    let columns: Vec<&str> = header.iter().collect();
    if columns.len() < 4 || columns[..3] != ["notional", "pd", "recovery"] {
        return Err(Error::Parse {
            record: 0,
            message: format!(
                "header must be `notional,pd,recovery,w1[,w2,...]`, got `{}`",
                columns.join(",")
            ),
        });
    }
    for (k, name) in columns[3..].iter().enumerate() {
        if *name != format!("w{}", k + 1) {
            return Err(Error::Parse {
                record: 0,
                message: format!("expected column `w{}`, got `{name}`", k + 1),
            });
        }
    }
    let m = columns.len() - 3;

    let mut loans = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(row + 1, e))?;
        let values = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    record: row + 1,
                    message: format!("column `{}`: cannot parse `{field}`", columns[col]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        loans.push(Loan::new(values[0], values[1], values[2], values[3..3 + m].to_vec()));
    }
    Portfolio::new(loans)
}

fn write_csv<W: Write>(portfolio: &Portfolio, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["notional".to_string(), "pd".into(), "recovery".into()];
    header.extend((1..=portfolio.num_factors).map(|k| format!("w{k}")));
    wtr.write_record(&header).map_err(|e| csv_error(0, e))?;
    for (i, loan) in portfolio.loans.iter().enumerate() {
        // `Display` for f64 is the shortest representation that round-trips.
        let mut row = vec![
            loan.notional.to_string(),
            loan.default_prob.to_string(),
            loan.recovery.to_string(),
        ];
        row.extend(loan.loadings.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(|e| csv_error(i + 1, e))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(notional: f64, pd: f64, recovery: f64, w: f64) -> Loan {
        Loan::new(notional, pd, recovery, vec![w])
    }

    #[test]
    fn fractions() {
        let p = example_portfolio();
        for i in [0, 62, 124] {
            assert_relative_eq!(p.fraction(i).unwrap(), 0.008, max_relative = 1e-15);
        }
        let p = Portfolio::new(vec![single(5.0, 0.1, 0.0, 0.0)]).unwrap();
        assert_eq!(p.fraction(0).unwrap(), 1.0);
        let p = Portfolio::new(vec![single(1.0, 0.1, 0.0, 0.0), single(3.0, 0.1, 0.0, 0.0)])
            .unwrap();
        assert_eq!(p.fraction(1).unwrap(), 0.75);
        assert!(matches!(p.fraction(2), Err(Error::IndexOutOfRange { index: 2, len: 2 })));
    }

    #[test]
    fn loss_given_default() {
        let p = example_portfolio();
        assert_relative_eq!(p.lgd(0).unwrap(), 0.004, max_relative = 1e-15);
        let p = Portfolio::new(vec![single(1.0, 0.1, 0.0, 0.0), single(1.0, 0.1, 0.5, 0.0)])
            .unwrap();
        assert_eq!(p.lgd(0).unwrap(), 0.5);
        assert_eq!(p.lgd(1).unwrap(), 0.25);
        assert!(p.lgd(7).is_err());
    }

    #[test]
    fn example_matches_ramps() {
        let p = example_portfolio();
        assert_eq!(p.len(), 125);
        assert_eq!(p.num_factors(), 1);
        let first = p.loan(0).unwrap();
        assert_eq!((first.default_prob, first.recovery, first.loadings[0]), (0.015, 0.5, 0.5));
        let last = p.loan(124).unwrap();
        assert_relative_eq!(last.default_prob, 0.065, max_relative = 1e-14);
        assert_relative_eq!(last.recovery, 0.4, max_relative = 1e-14);
        assert_relative_eq!(last.loadings[0], 0.4, max_relative = 1e-14);
        let mid = p.loan(62).unwrap();
        assert_relative_eq!(mid.default_prob, 0.04, max_relative = 1e-14);
        assert_relative_eq!(mid.recovery, 0.45, max_relative = 1e-14);
        assert_relative_eq!(mid.loadings[0], 0.45, max_relative = 1e-14);
    }

    #[test]
    fn expected_loss_values() {
        let p = Portfolio::new(vec![single(1.0, 0.02, 0.5, 0.3)]).unwrap();
        assert_relative_eq!(p.expected_loss(), 0.01, max_relative = 1e-15);
        let p = Portfolio::new(vec![single(1.0, 1e-300, 0.5, 0.3), single(2.0, 1e-300, 0.0, 0.1)])
            .unwrap();
        assert!(p.expected_loss() < 1e-299);
    }

    #[test]
    fn validation_errors_name_the_loan() {
        let bad = [
            single(0.0, 0.1, 0.0, 0.0),
            single(1.0, 1.5, 0.0, 0.0),
            single(1.0, 0.0, 0.0, 0.0),
            single(1.0, 1.0, 0.0, 0.0),
            single(1.0, 0.1, 1.0, 0.0),
            single(1.0, 0.1, -0.1, 0.0),
            single(1.0, 0.1, 0.0, 1.0),
            Loan::new(1.0, 0.1, 0.0, vec![0.8, 0.7]),
        ];
        for loan in bad {
            let loans = vec![single(1.0, 0.1, 0.0, 0.0), loan.clone()];
            match Portfolio::new(loans) {
                Err(Error::InvalidLoan { index: 1, .. }) => {}
                other => panic!("{loan:?} gave {other:?}"),
            }
        }
        assert!(matches!(Portfolio::new(vec![]), Err(Error::InvalidPortfolio(_))));
        let mixed = vec![single(1.0, 0.1, 0.0, 0.0), Loan::new(1.0, 0.1, 0.0, vec![0.1, 0.1])];
        assert!(matches!(Portfolio::new(mixed), Err(Error::InvalidLoan { index: 1, .. })));
    }

    #[test]
    fn csv_parsing() {
        let src = "notional,pd,recovery,w1\n100,0.01,0.4,0.3\n50,0.02,0.5,0.2\n";
        let p = Portfolio::from_reader(src.as_bytes(), Format::Csv).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.loan(1).unwrap(), &single(50.0, 0.02, 0.5, 0.2));

        let src = "notional,pd,recovery,w1\n100,0.01,0.4,0.3\n50,1.5,0.5,0.2\n";
        let err = Portfolio::from_reader(src.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::InvalidLoan { index: 1, .. }), "{err}");

        let src = "notional,pd,recovery,w1,w2\n1,0.01,0.4,0.8,0.7\n";
        let err = Portfolio::from_reader(src.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::InvalidLoan { index: 0, .. }), "{err}");

        let src = "notional,pd,recovery,w1\n1,0.01,0.4\n";
        let err = Portfolio::from_reader(src.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { record: 1, .. }), "{err}");

        let src = "notional,pd,recovery,w1\n1,abc,0.4,0.1\n";
        let err = Portfolio::from_reader(src.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { record: 1, .. }), "{err}");

        let src = "notional,pd,recovery,w2\n1,0.1,0.4,0.1\n";
        assert!(matches!(
            Portfolio::from_reader(src.as_bytes(), Format::Csv),
            Err(Error::Parse { record: 0, .. })
        ));
    }

    #[test]
    fn json_parsing() {
        let src = r#"{"loans": [
            {"notional": 1, "pd": 0.01, "recovery": 0.4, "loadings": [0.3, 0.2]},
            {"notional": 2, "pd": 0.03, "recovery": 0.0, "loadings": [0.1, 0.5]}
        ]}"#;
        let p = Portfolio::from_reader(src.as_bytes(), Format::Json).unwrap();
        assert_eq!(p.num_factors(), 2);
        assert_eq!(p.loan(1).unwrap().loadings, vec![0.1, 0.5]);
        assert!(matches!(
            Portfolio::from_reader("{\"loans\": [".as_bytes(), Format::Json),
            Err(Error::Parse { .. })
        ));
    }

    fn arb_portfolio() -> impl Strategy<Value = Portfolio> {
        (1usize..4).prop_flat_map(|m| {
            prop::collection::vec(
                (
                    1e-3f64..1e6,
                    1e-6f64..0.999,
                    0.0f64..0.999,
                    prop::collection::vec(-0.55f64..0.55, m),
                ),
                1..20,
            )
            .prop_map(|rows| {
                Portfolio::new(
                    rows.into_iter()
                        .map(|(n, p, r, w)| Loan::new(n, p, r, w))
                        .collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one(p in arb_portfolio()) {
            let total: f64 = (0..p.len()).map(|i| p.fraction(i).unwrap()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.expected_loss() >= 0.0 && p.expected_loss() <= p.max_loss());
        }

        #[test]
        fn file_round_trip(p in arb_portfolio()) {
            for format in [Format::Csv, Format::Json] {
                let mut buf = Vec::new();
                p.to_writer(&mut buf, format).unwrap();
                let back = Portfolio::from_reader(buf.as_slice(), format).unwrap();
                prop_assert_eq!(&back, &p);
            }
        }

        #[test]
        fn notional_scaling_preserves_fractions(p in arb_portfolio(), scale in 1e-3f64..1e3) {
            let scaled = p.map_loans(|(_, l)| Loan { notional: l.notional * scale, ..l.clone() }).unwrap();
            for i in 0..p.len() {
                prop_assert!((scaled.fraction(i).unwrap() - p.fraction(i).unwrap()).abs() <= 1e-14);
                prop_assert!((scaled.lgd(i).unwrap() - p.lgd(i).unwrap()).abs() <= 1e-14);
            }
        }

        #[test]
        fn expected_loss_monotone_in_pd(p in arb_portfolio(), i in 0usize..20, bump in 0.0f64..0.5) {
            let i = i % p.len();
            let bumped = p.map_loans(|(j, l)| {
                let mut l = l.clone();
                if j == i { l.default_prob += (0.999 - l.default_prob) * bump; }
                l
            }).unwrap();
            prop_assert!(bumped.expected_loss() >= p.expected_loss());
        }
    }
}
