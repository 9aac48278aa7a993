//! Properties of the loss engine, VaR solver and sensitivities on random
//! portfolios, plus exact-enumeration checks for small independent books.

use factorvar::quadrature::DEFAULT_ORDER;
use factorvar::{
    cond_moments, greeks, normal, solve_var, solve_var_newton, Loan, LossDistribution, Portfolio,
    QuadratureGrid,
};
use proptest::prelude::*;

fn arb_portfolio(max_loans: usize, factors: usize) -> impl Strategy<Value = Portfolio> {
    prop::collection::vec(
        (
            0.1f64..10.0,
            0.001f64..0.3,
            0.0f64..0.9,
            prop::collection::vec(-0.5f64..0.6, factors),
        ),
        1..max_loans,
    )
    .prop_map(|rows| {
        Portfolio::new(rows.into_iter().map(|(n, p, r, w)| Loan::new(n, p, r, w)).collect())
            .unwrap()
    })
}

/// Exact loss distribution of independent loans as sorted (loss, probability)
/// atoms, by enumerating every default pattern.
fn enumerate_losses(portfolio: &Portfolio) -> Vec<(f64, f64)> {
    let n = portfolio.len();
    let lgd: Vec<f64> = (0..n).map(|i| portfolio.lgd(i).unwrap()).collect();
    let pd: Vec<f64> = portfolio.loans().iter().map(|l| l.default_prob).collect();
    let mut atoms: Vec<(f64, f64)> = (0u32..1 << n)
        .map(|mask| {
            (0..n).fold((0.0, 1.0), |(loss, prob), i| {
                if mask & (1 << i) != 0 {
                    (loss + lgd[i], prob * pd[i])
                } else {
                    (loss, prob * (1.0 - pd[i]))
                }
            })
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// sup_x |exact CDF − engine CDF|, checked at every atom and its left limit.
fn kolmogorov_distance(portfolio: &Portfolio, dist: &LossDistribution<'_>) -> f64 {
    let atoms = enumerate_losses(portfolio);
    let mut below = 0.0;
    let mut worst: f64 = 0.0;
    for (loss, prob) in atoms {
        let approx = dist.cdf(loss);
        worst = worst.max((below - approx).abs());
        below += prob;
        worst = worst.max((below - approx).abs());
    }
    worst
}

/// Berry-Esseen bound for sums of independent, non-identical terms
/// (constant 0.56, Shevtsova 2010).
fn berry_esseen_bound(portfolio: &Portfolio) -> f64 {
    let (mut var, mut third) = (0.0, 0.0);
    for (i, loan) in portfolio.loans().iter().enumerate() {
        let l = portfolio.lgd(i).unwrap();
        let p = loan.default_prob;
        var += l * l * p * (1.0 - p);
        third += l.powi(3) * p * (1.0 - p) * (p * p + (1.0 - p) * (1.0 - p));
    }
    0.56 * third / var.powf(1.5)
}

fn independent(rows: &[(f64, f64, f64)]) -> Portfolio {
    Portfolio::new(rows.iter().map(|&(n, p, r)| Loan::new(n, p, r, vec![0.0])).collect()).unwrap()
}

#[test]
fn enumeration_oracle_sanity() {
    // Two loans: atoms 0, 1/3·… are easy to list by hand.
    let p = independent(&[(1.0, 0.2, 0.0), (2.0, 0.5, 0.0)]);
    let atoms = enumerate_losses(&p);
    let expected = [(0.0, 0.4), (1.0 / 3.0, 0.1), (2.0 / 3.0, 0.4), (1.0, 0.1)];
    for (a, e) in atoms.iter().zip(expected) {
        assert!((a.0 - e.0).abs() < 1e-15 && (a.1 - e.1).abs() < 1e-15);
    }
}

fn twelve_loan_book(recovery: impl Fn(usize) -> f64) -> Portfolio {
    let rows: Vec<(f64, f64, f64)> = (0..12)
        .map(|k| {
            let t = k as f64 / 11.0;
            (1.0 + 0.5 * t, 0.3 + 0.4 * ((k * 5) % 12) as f64 / 11.0, recovery(k))
        })
        .collect();
    independent(&rows)
}

#[test]
fn fixed_twelve_loan_book_within_clt_envelope() {
    let p = twelve_loan_book(|k| 0.9 * ((k * 7) % 12) as f64 / 11.0);
    let grid = QuadratureGrid::normal(8, 1).unwrap();
    let dist = LossDistribution::new(&p, &grid).unwrap();
    let d = kolmogorov_distance(&p, &dist);
    println!("12-loan independent book: sup |exact - approx| = {d:.4}");
    assert!(d < 0.05);
    assert!(d <= berry_esseen_bound(&p));
}

#[test]
fn near_lattice_book_exceeds_envelope_but_not_berry_esseen() {
    // Recovery offsets the notional ramp, so every loss size is nearly equal
    // and the exact distribution is close to a scaled binomial.
    let p = twelve_loan_book(|k| 0.4 * k as f64 / 11.0);
    let grid = QuadratureGrid::normal(8, 1).unwrap();
    let dist = LossDistribution::new(&p, &grid).unwrap();
    let d = kolmogorov_distance(&p, &dist);
    assert!(d > 0.05);
    assert!(d <= berry_esseen_bound(&p));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clt_envelope_for_twelve_moderate_loans(
        rows in prop::collection::vec((1.0f64..1.5, 0.3f64..0.7, 0.0f64..0.9), 12)
    ) {
        let p = independent(&rows);
        let grid = QuadratureGrid::normal(4, 1).unwrap();
        let dist = LossDistribution::new(&p, &grid).unwrap();
        prop_assert!(kolmogorov_distance(&p, &dist) < 0.05);
    }

    #[test]
    fn berry_esseen_holds_for_small_books(
        rows in prop::collection::vec((0.1f64..10.0, 0.01f64..0.99, 0.0f64..0.9), 1..=12)
    ) {
        let p = independent(&rows);
        let grid = QuadratureGrid::normal(4, 1).unwrap();
        let dist = LossDistribution::new(&p, &grid).unwrap();
        prop_assert!(kolmogorov_distance(&p, &dist) <= berry_esseen_bound(&p));
    }

    #[test]
    fn cdf_is_monotone(p in arb_portfolio(30, 2), mut xs in prop::collection::vec(-0.1f64..1.1, 2..60)) {
        xs.sort_by(f64::total_cmp);
        let grid = QuadratureGrid::normal(12, 2).unwrap();
        let dist = LossDistribution::new(&p, &grid).unwrap();
        let curve = dist.cdf_curve(&xs).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert!(dist.cdf(f64::NEG_INFINITY).abs() <= 1e-12);
        prop_assert!((dist.cdf(f64::INFINITY) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn node_means_average_to_expected_loss(p in arb_portfolio(30, 1)) {
        let grid = QuadratureGrid::normal(DEFAULT_ORDER, 1).unwrap();
        let dist = LossDistribution::new(&p, &grid).unwrap();
        prop_assert!((dist.mean() - p.expected_loss()).abs() <= 1e-10);
    }

    #[test]
    fn clone_split_keeps_means_and_halves_variance(
        p in arb_portfolio(20, 2),
        j in 0usize..20,
        factors in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let j = j % p.len();
        let mut loans = Vec::new();
        for (i, l) in p.loans().iter().enumerate() {
            if i == j {
                let half = Loan { notional: l.notional / 2.0, ..l.clone() };
                loans.push(half.clone());
                loans.push(half);
            } else {
                loans.push(l.clone());
            }
        }
        let split = Portfolio::new(loans).unwrap();

        let before = cond_moments(&p, &factors).unwrap();
        let after = cond_moments(&split, &factors).unwrap();
        let pj = factorvar::cond_default_prob(&p.loans()[j], &factors).unwrap();
        let lgd = p.lgd(j).unwrap();
        let contribution = lgd * lgd * pj * (1.0 - pj);

        prop_assert!((before.mean - after.mean).abs() <= 1e-14);
        prop_assert!((after.variance - (before.variance - 0.5 * contribution)).abs() <= 1e-14);
    }

    #[test]
    fn var_root_certificate_and_monotone_in_q(
        p in arb_portfolio(25, 1),
        q1 in 0.5f64..0.999,
        dq in 0.0f64..0.05,
    ) {
        let grid = QuadratureGrid::normal(40, 1).unwrap();
        let dist = LossDistribution::new(&p, &grid).unwrap();
        let q2 = (q1 + dq).min(0.9995);
        let tol = 1e-4;
        let (Ok(a), Ok(b)) = (solve_var(&dist, q1, tol), solve_var(&dist, q2, tol)) else {
            // q below F(0) for very safe books.
            return Ok(());
        };
        for r in [&a, &b] {
            prop_assert!(dist.cdf(r.var - tol) <= r.confidence);
            prop_assert!(dist.cdf(r.var + tol) >= r.confidence);
            prop_assert_eq!(r.economic_capital, r.var - p.expected_loss());
            let bound = (p.max_loss() / tol).log2().ceil() as usize;
            // One endpoint check when every midpoint lands on the same side.
            prop_assert!(r.evaluations <= bound + 1);
        }
        let tight1 = solve_var_newton(&dist, q1, 1e-12, a.var).unwrap();
        let tight2 = solve_var_newton(&dist, q2, 1e-12, b.var).unwrap();
        prop_assert!(tight1.var <= tight2.var + 1e-12);
    }

    #[test]
    fn scaling_notionals_changes_nothing_but_notional_greeks(
        p in arb_portfolio(15, 2),
        scale in 0.01f64..100.0,
    ) {
        let scaled = p.map_loans(|(_, l)| Loan { notional: l.notional * scale, ..l.clone() }).unwrap();
        let grid = QuadratureGrid::normal(16, 2).unwrap();
        let d1 = LossDistribution::new(&p, &grid).unwrap();
        let d2 = LossDistribution::new(&scaled, &grid).unwrap();
        let q = 0.999;
        let (Ok(v1), Ok(v2)) = (solve_var(&d1, q, 1e-10), solve_var(&d2, q, 1e-10)) else {
            return Ok(());
        };
        prop_assert!((v1.var - v2.var).abs() <= 1e-9);
        let g1 = greeks(&d1, &v1).unwrap();
        let g2 = greeks(&d2, &v2).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-6);
        for i in 0..p.len() {
            prop_assert!(close(g1.d_var_d_pd[i], g2.d_var_d_pd[i]));
            prop_assert!(close(g1.d_var_d_recovery[i], g2.d_var_d_recovery[i]));
            prop_assert!(close(g1.d_var_d_notional[i], scale * g2.d_var_d_notional[i]));
        }
        let euler: f64 = p.loans().iter().zip(&g1.d_var_d_notional).map(|(l, d)| l.notional * d).sum();
        prop_assert!(euler.abs() <= 1e-10);
    }
}

#[test]
fn zero_loading_density_matches_single_normal() {
    // Independent loans: every node has the same moments.
    let p = independent(&[(1.0, 0.1, 0.2), (2.0, 0.05, 0.4), (0.5, 0.3, 0.0)]);
    let grid = QuadratureGrid::normal(20, 1).unwrap();
    let dist = LossDistribution::new(&p, &grid).unwrap();
    let m = cond_moments(&p, &[0.0]).unwrap();
    let sd = m.variance.sqrt();
    for x in [0.0, 0.05, 0.1, 0.3] {
        let want = normal::pdf((x - m.mean) / sd) / sd;
        assert!((dist.density(x) - want).abs() <= 1e-12 * want.max(1.0));
    }
}
