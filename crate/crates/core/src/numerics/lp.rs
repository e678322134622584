//! Feasibility of `G p >= rhs` with Farkas certificates, and l1-cost recourse LPs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use super::simplex::{dual_max, phase_one, DualOutcome, PhaseOne};
use super::{all_finite, DenseMatrix, Tolerances};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Feasible,
    Infeasible,
}

/// Outcome of a feasibility test for `G p >= rhs`.
///
/// A feasible result carries a `witness` point; an infeasible one carries
/// nonnegative weights `certificate` summing to one with `G^T w = 0` and
/// `rhs^T w > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpFeasibility {
    pub status: LpStatus,
    pub witness: Vec<f64>,
    pub certificate: Vec<f64>,
}

impl LpFeasibility {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Feasible
    }
}

fn check_system(g: &DenseMatrix, rhs: &[f64]) -> Result<()> {
    if g.rows() != rhs.len() {
        return Err(Error::DimensionMismatch {
            context: "constraint right-hand side",
            expected: g.rows(),
            found: rhs.len(),
        });
    }
    if !all_finite(rhs) || !all_finite(g.as_slice()) {
        return Err(Error::invalid("constraint system has non-finite entries"));
    }
    Ok(())
}

/// Decides whether some `p` satisfies `G p >= h + eps` componentwise.
pub fn lp_strict_feasible(g: &DenseMatrix, h: &[f64], eps: f64, tol: &Tolerances) -> Result<LpFeasibility> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid("strict margin must be positive and finite"));
    }
    check_system(g, h)?;
    let rhs: Vec<f64> = h.iter().map(|v| v + eps).collect();
    feasible_with_rhs(g, &rhs, tol)
}

/// Decides whether some `p` satisfies `G p >= rhs`.
///
/// Works on the small dual system `G^T w = 0, rhs^T w = 1, w >= 0` (one equality
/// per column of `G` plus the normalization), which is feasible exactly when the
/// primal is not. A feasible primal gets its witness from the minimum-l1-norm
/// point of the region.
pub fn feasible_with_rhs(g: &DenseMatrix, rhs: &[f64], tol: &Tolerances) -> Result<LpFeasibility> {
    check_system(g, rhs)?;
    let (k, d) = (g.rows(), g.cols());
    // Normalizing by the largest |rhs| keeps the Farkas weights near unit scale
    // even when rhs is just the strict margin.
    let scale = rhs.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    if k == 0 || scale == 0.0 {
        return Ok(LpFeasibility {
            status: LpStatus::Feasible,
            witness: vec![0.0; d],
            certificate: Vec::new(),
        });
    }
    let mut sys = DenseMatrix::zeros(d + 1, k);
    for j in 0..k {
        for c in 0..d {
            sys[(c, j)] = g[(j, c)];
        }
        sys[(d, j)] = rhs[j] / scale;
    }
    let mut e = vec![0.0; d + 1];
    e[d] = 1.0;

    match phase_one(&sys, &e, tol)? {
        PhaseOne::Feasible(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Numerical("degenerate Farkas weights".into()));
            }
            let certificate: Vec<f64> = w.iter().map(|v| v / total).collect();
            if !certifies_infeasibility(g, rhs, &certificate, tol) {
                return Err(Error::Numerical("Farkas certificate failed verification".into()));
            }
            Ok(LpFeasibility {
                status: LpStatus::Infeasible,
                witness: Vec::new(),
                certificate,
            })
        }
        PhaseOne::Infeasible(y) => {
            let zero = vec![0.0; d];
            let mut candidates = Vec::with_capacity(2);
            if let L1Outcome::Optimal { action, .. } =
                min_l1_with_rhs(g, rhs, &zero, f64::NEG_INFINITY, f64::INFINITY, tol)?
            {
                candidates.push(action);
            }
            // The phase-one dual ray is a second route to a witness.
            let t = y[d];
            if t > 0.0 {
                candidates.push(y[..d].iter().map(|v| -v / t).collect());
            }
            let witness = candidates
                .into_iter()
                .find(|p| satisfies(g, rhs, p, tol))
                .ok_or_else(|| Error::Numerical("no verified witness for a feasible system".into()))?;
            Ok(LpFeasibility {
                status: LpStatus::Feasible,
                witness,
                certificate: Vec::new(),
            })
        }
    }
}

/// Does `p` satisfy `G p >= rhs` up to rounding?
fn satisfies(g: &DenseMatrix, rhs: &[f64], p: &[f64], tol: &Tolerances) -> bool {
    let gp = g.matvec(p);
    let p_scale = p.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    (0..g.rows()).all(|r| {
        let row_scale = g.row(r).iter().map(|v| v.abs()).sum::<f64>();
        gp[r] >= rhs[r] - tol.feasibility * (1.0 + rhs[r].abs() + row_scale * p_scale)
    })
}

/// Is `w` (summing to one) a valid Farkas certificate: `w >= 0`, `G^T w = 0`,
/// `rhs^T w > 0`?
fn certifies_infeasibility(g: &DenseMatrix, rhs: &[f64], w: &[f64], tol: &Tolerances) -> bool {
    let g_scale = 1.0 + g.max_abs();
    let stationary = g.tr_matvec(w).iter().all(|v| v.abs() <= tol.feasibility * g_scale);
    let positive = rhs.iter().zip(w).map(|(r, x)| r * x).sum::<f64>() > 0.0;
    w.iter().all(|&x| x >= 0.0) && stationary && positive
}

/// Result of an l1 recourse minimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum L1Outcome {
    Optimal { action: Vec<f64>, cost: f64 },
    Infeasible,
}

/// `min |a - a_hat|_1` subject to `C a >= rhs` and `lo <= a <= hi`.
///
/// Infinite bounds drop the corresponding box rows. Solved through the LP dual,
/// whose slack basis is feasible from the start.
pub fn min_l1_with_rhs(
    c: &DenseMatrix,
    rhs: &[f64],
    a_hat: &[f64],
    lo: f64,
    hi: f64,
    tol: &Tolerances,
) -> Result<L1Outcome> {
    check_system(c, rhs)?;
    let k = c.cols();
    if a_hat.len() != k {
        return Err(Error::DimensionMismatch {
            context: "l1 anchor",
            expected: k,
            found: a_hat.len(),
        });
    }
    if !all_finite(a_hat) || lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::invalid("l1 anchor must be finite and lo <= hi"));
    }
    let c_hat = c.matvec(a_hat);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for r in 0..c.rows() {
        let mut row = vec![0.0; 2 * k];
        for j in 0..k {
            row[j] = c[(r, j)];
            row[k + j] = -c[(r, j)];
        }
        rows.push(row);
        b.push(rhs[r] - c_hat[r]);
    }
    for j in 0..k {
        if lo.is_finite() {
            let mut row = vec![0.0; 2 * k];
            row[j] = 1.0;
            row[k + j] = -1.0;
            rows.push(row);
            b.push(lo - a_hat[j]);
        }
        if hi.is_finite() {
            let mut row = vec![0.0; 2 * k];
            row[j] = -1.0;
            row[k + j] = 1.0;
            rows.push(row);
            b.push(a_hat[j] - hi);
        }
    }
    let a = DenseMatrix::from_fn(rows.len(), 2 * k, |r, j| rows[r][j]);
    let costs = vec![1.0; 2 * k];
    match dual_max(&a, &b, &costs, tol)? {
        DualOutcome::Unbounded => Ok(L1Outcome::Infeasible),
        DualOutcome::Optimal { y, prices } => {
            let action: Vec<f64> = (0..k).map(|j| a_hat[j] + prices[j] - prices[k + j]).collect();
            let cost: f64 = action.iter().zip(a_hat).map(|(x, y)| (x - y).abs()).sum();
            let dual_value: f64 = b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum();
            if (cost - dual_value).abs() > 1e-6 * (1.0 + cost.abs()) {
                return Err(Error::Numerical(format!("l1 duality gap {cost} vs {dual_value}")));
            }
            Ok(L1Outcome::Optimal { action, cost })
        }
    }
}

/// Cheapest action in l1 distance from `a_hat` that puts the user factor
/// `v0 + B a` into the region `G p >= h + eps`, with ratings boxed in `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn min_l1_recourse(
    b: &DenseMatrix,
    v0: &[f64],
    g: &DenseMatrix,
    h: &[f64],
    a_hat: &[f64],
    lo: f64,
    hi: f64,
    eps: f64,
    tol: &Tolerances,
) -> Result<L1Outcome> {
    if b.rows() != v0.len() || g.cols() != v0.len() {
        return Err(Error::DimensionMismatch {
            context: "recourse anchor",
            expected: g.cols(),
            found: v0.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("strict margin must be positive"));
    }
    check_system(g, h)?;
    let gb = g.matmul(b);
    let gv = g.matvec(v0);
    let rhs: Vec<f64> = h.iter().zip(&gv).map(|(hv, gvv)| hv + eps - gvv).collect();
    min_l1_with_rhs(&gb, &rhs, a_hat, lo, hi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn half_line_is_feasible() {
        let g = DenseMatrix::from_rows(&[&[2.0]]).unwrap();
        let r = lp_strict_feasible(&g, &[0.0], 1e-6, &tol()).unwrap();
        assert!(r.is_feasible());
        assert!(r.witness[0] > 0.0);
    }

    #[test]
    fn midpoint_item_has_even_certificate() {
        let q1 = [1.0, 0.0];
        let q2 = [0.0, 1.0];
        let q3 = [0.5, 0.5];
        let g = DenseMatrix::from_rows(&[&[q3[0] - q1[0], q3[1] - q1[1]], &[q3[0] - q2[0], q3[1] - q2[1]]]).unwrap();
        let r = lp_strict_feasible(&g, &[0.0, 0.0], 1e-6, &tol()).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
        assert!((r.certificate[0] - 0.5).abs() < 1e-12);
        assert!((r.certificate[1] - 0.5).abs() < 1e-12);
        assert!(norm(&g.tr_matvec(&r.certificate)) < 1e-12);
    }

    #[test]
    fn bias_domination_decides_duplicate_factors() {
        // q1 = q2 = (1, 0); b = (0, 1). Item 1's region has G = [0 0], h = (b2 - b1) = 1.
        let g = DenseMatrix::from_rows(&[&[0.0, 0.0]]).unwrap();
        let r1 = lp_strict_feasible(&g, &[1.0], 1e-6, &tol()).unwrap();
        assert_eq!(r1.status, LpStatus::Infeasible);
        assert_eq!(r1.certificate, vec![1.0]);
        // Item 2's region: h = b1 - b2 = -1, always satisfied.
        let r2 = lp_strict_feasible(&g, &[-1.0], 1e-6, &tol()).unwrap();
        assert!(r2.is_feasible());
    }

    #[test]
    fn margin_only_rhs_stays_sound() {
        // A target inside the hull of 19 rivals, with the strict margin as the
        // whole right-hand side. An unscaled normalization reported it feasible
        // with a witness violating several rows.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1003);
        let m = rng.gen_range(3..=30);
        let q = DenseMatrix::from_fn(m, 2, |_, _| rng.gen_range(-1.0..1.0));
        let rivals: Vec<usize> = (0..m).filter(|&j| j != 14).collect();
        let g = DenseMatrix::from_fn(rivals.len(), 2, |r, c| q[(14, c)] - q[(rivals[r], c)]);
        let eps = tol().strict_margin(&g);
        let r = lp_strict_feasible(&g, &vec![0.0; rivals.len()], eps, &tol()).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
        assert!(norm(&g.tr_matvec(&r.certificate)) < 1e-12);
    }

    #[test]
    fn empty_system_is_feasible() {
        let g = DenseMatrix::zeros(0, 3);
        let r = lp_strict_feasible(&g, &[], 1e-6, &tol()).unwrap();
        assert!(r.is_feasible());
        assert_eq!(r.witness, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_margin() {
        let g = DenseMatrix::from_rows(&[&[1.0]]).unwrap();
        assert!(lp_strict_feasible(&g, &[0.0], 0.0, &tol()).is_err());
        assert!(lp_strict_feasible(&g, &[0.0, 1.0], 1e-6, &tol()).is_err());
    }

    #[test]
    fn l1_feasible_start_costs_nothing() {
        let b = DenseMatrix::identity(1);
        let g = DenseMatrix::from_rows(&[&[1.0]]).unwrap();
        let out = min_l1_recourse(&b, &[0.0], &g, &[0.0], &[3.0], 0.0, 5.0, 1e-6, &tol()).unwrap();
        match out {
            L1Outcome::Optimal { action, cost } => {
                assert_eq!(cost, 0.0);
                assert_eq!(action, vec![3.0]);
            }
            L1Outcome::Infeasible => panic!(),
        }
    }

    #[test]
    fn l1_infeasible_region() {
        let b = DenseMatrix::identity(2);
        // Needs p1 > 0 and -p1 > 0.
        let g = DenseMatrix::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap();
        let out = min_l1_recourse(&b, &[0.0, 0.0], &g, &[0.0, 0.0], &[0.0, 0.0], -5.0, 5.0, 1e-6, &tol()).unwrap();
        assert_eq!(out, L1Outcome::Infeasible);
    }

    #[test]
    fn l1_respects_box() {
        // p = a, need p > 2 but a <= 1.
        let b = DenseMatrix::identity(1);
        let g = DenseMatrix::from_rows(&[&[1.0]]).unwrap();
        let out = min_l1_recourse(&b, &[0.0], &g, &[2.0], &[0.0], 0.0, 1.0, 1e-6, &tol()).unwrap();
        assert_eq!(out, L1Outcome::Infeasible);
        let out = min_l1_recourse(&b, &[0.0], &g, &[2.0], &[0.0], 0.0, 5.0, 1e-6, &tol()).unwrap();
        match out {
            L1Outcome::Optimal { cost, .. } => assert!((cost - (2.0 + 1e-6)).abs() < 1e-9),
            L1Outcome::Infeasible => panic!(),
        }
    }
}
