//! Property tests against brute-force oracles written independently of the
//! library kernels.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use reach_core::audit::{aligned_delta, exact_top1_available, sampled_available_items};
use reach_core::model::{predict, top_n, user_factor};
use reach_core::numerics::{lp_strict_feasible, ridge_solve, svd};
use reach_core::{BiasSign, DenseMatrix, FactorModel, RatingHistory, Tolerances};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (3usize..25, 1usize..5)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn scores(q: &DenseMatrix, p: &[f64]) -> Vec<f64> {
    (0..q.rows())
        .map(|i| q.row(i).iter().zip(p).map(|(a, b)| a * b).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_n_matches_sorting(((m, d), seed) in (dims(), any::<u64>()), n in 1usize..6) {
        let q = DenseMatrix::from_fn(m, d, |r, c| ((seed.wrapping_mul(r as u64 * 31 + c as u64 + 7) % 1000) as f64) / 100.0 - 5.0);
        let model = FactorModel::unbiased(q.clone(), 0.1).unwrap();
        let p: Vec<f64> = (0..d).map(|k| 1.0 - 0.3 * k as f64).collect();
        let s = scores(&q, &p);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        order.truncate(n);
        let mut got = top_n(&model, &p, 0.0, &[], n);
        got.sort_unstable();
        order.sort_unstable();
        prop_assert_eq!(got, order);
    }

    #[test]
    fn ridge_solve_matches_normal_equations(a in matrix(8, 3), t in prop::collection::vec(-5.0f64..5.0, 8), lambda in 0.01f64..2.0) {
        let x = ridge_solve(&a, &t, lambda).unwrap();
        let mut lhs = vec![vec![0.0; 3]; 3];
        let mut rhs = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                lhs[i][j] = (0..8).map(|r| a[(r, i)] * a[(r, j)]).sum::<f64>() + if i == j { lambda } else { 0.0 };
            }
            rhs[i] = (0..8).map(|r| a[(r, i)] * t[r]).sum();
        }
        let oracle = gauss_solve(lhs, rhs);
        for (u, v) in x.iter().zip(&oracle) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()), "{} vs {}", u, v);
        }
    }

    #[test]
    fn svd_reconstructs(a in matrix(5, 3)) {
        let s = svd(&a).unwrap();
        let back = s.reconstruct();
        prop_assert!(back.sub(&a).max_abs() <= 1e-10 * (1.0 + a.max_abs()));
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn aligned_items_are_top_n_at_their_own_factor(((m, d), n) in (dims(), 1usize..6), q in matrix(25, 4), b in prop::collection::vec(-1.0f64..1.0, 25)) {
        let q = q.select_rows(&(0..m).collect::<Vec<_>>()).select_cols(&(0..d).collect::<Vec<_>>());
        let model = FactorModel::new(q.clone(), b[..m].to_vec(), 0.0, 0.1, BiasSign::Additive).unwrap();
        for i in 0..m {
            if aligned_delta(&model, i, &[], n).unwrap() > 0.0 {
                let s: Vec<f64> = scores(&q, q.row(i)).iter().zip(&b).map(|(x, bi)| x + bi).collect();
                let beaten = (0..m).filter(|&j| j != i && s[j] >= s[i]).count();
                prop_assert!(beaten < n, "item {} aligned but {} rivals score at least as high", i, beaten);
            }
        }
    }

    #[test]
    fn sampled_top1_implies_exact_availability(q in matrix(12, 2), probes in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 2), 1..20)) {
        let model = FactorModel::unbiased(q, 0.0).unwrap();
        let seen_at_probe = sampled_available_items(&model, &probes, &[], 1).unwrap();
        let tol = Tolerances::default();
        for (i, hit) in seen_at_probe.iter().enumerate() {
            let exact = exact_top1_available(&model, i, &[], &tol).unwrap();
            if *hit {
                prop_assert!(exact.is_feasible(), "item {} strictly top-1 at a probe but reported unavailable", i);
            }
            if exact.is_feasible() {
                let s = scores(model.q(), &exact.witness);
                prop_assert!((0..12).all(|j| j == i || s[i] > s[j]));
            }
        }
    }

    #[test]
    fn lp_results_carry_valid_evidence(g in matrix(6, 2), h in prop::collection::vec(-2.0f64..2.0, 6)) {
        let tol = Tolerances::default();
        let eps = tol.strict_margin(&g);
        let res = lp_strict_feasible(&g, &h, eps, &tol).unwrap();
        if res.is_feasible() {
            let gp = g.matvec(&res.witness);
            for r in 0..6 {
                prop_assert!(gp[r] - h[r] >= eps - 1e-7);
            }
        } else {
            let w = &res.certificate;
            prop_assert!(w.iter().all(|&x| x >= -1e-9));
            for c in 0..2 {
                let s: f64 = (0..6).map(|r| g[(r, c)] * w[r]).sum();
                prop_assert!(s.abs() <= 1e-7);
            }
            let lhs: f64 = (0..6).map(|r| (h[r] + eps) * w[r]).sum();
            prop_assert!(lhs > 0.0);
        }
    }

    #[test]
    fn user_factor_minimizes_the_ridge_objective(q in matrix(10, 3), r in prop::collection::vec(0.0f64..5.0, 4), bias in prop::collection::vec(-1.0f64..1.0, 10)) {
        let model = FactorModel::new(q.clone(), bias.clone(), 3.0, 0.3, BiasSign::Residual).unwrap();
        let hist = RatingHistory::new(0, vec![1, 4, 6, 9], r.clone(), 0.25).unwrap();
        let p = user_factor(&model, &hist).unwrap();
        let objective = |p: &[f64]| -> f64 {
            let fit: f64 = hist.omega().iter().zip(&r).map(|(&i, &ri)| {
                let e = predict(&model, p, 0.25, i).unwrap() - ri;
                e * e
            }).sum();
            fit + 0.3 * p.iter().map(|x| x * x).sum::<f64>()
        };
        let base = objective(&p);
        for k in 0..3 {
            for step in [1e-3, -1e-3] {
                let mut p2 = p.clone();
                p2[k] += step;
                prop_assert!(objective(&p2) >= base - 1e-9);
            }
        }
    }
}
