//! Dense tableau simplex with Bland's anti-cycling rule.

use alloc::vec;
use alloc::vec::Vec;

use super::{DenseMatrix, Tolerances};
use crate::error::{Error, Result};

pub(crate) enum PhaseOne {
    /// A basic feasible point of `A x = b, x >= 0`.
    Feasible(Vec<f64>),
    /// `y` with `A^T y <= 0` and `b^T y > 0`.
    Infeasible(Vec<f64>),
}

pub(crate) enum DualOutcome {
    /// Optimal dual point `y` and the primal prices recovered from the slack columns.
    Optimal {
        y: Vec<f64>,
        prices: Vec<f64>,
    },
    Unbounded,
}

enum Stop {
    Optimal,
    Unbounded,
}

struct Tableau<'t> {
    rows: usize,
    width: usize,   // columns excluding the right-hand side
    t: Vec<f64>,    // rows x (width + 1)
    cost: Vec<f64>, // reduced costs, last entry is -objective
    basis: Vec<usize>,
    iterations: usize,
    cap: usize,
    tol: &'t Tolerances,
}

impl<'t> Tableau<'t> {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.width + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let stride = self.width + 1;
        let p = self.at(pr, pc);
        for v in &mut self.t[pr * stride..(pr + 1) * stride] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[pr * stride..(pr + 1) * stride].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.at(r, pc);
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.t[r * stride..(r + 1) * stride].iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.t[r * stride + pc] = 0.0;
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Minimizes the current cost row over columns accepted by `allowed`.
    fn optimize(&mut self, allowed: impl Fn(usize) -> bool) -> Result<Stop> {
        loop {
            let entering = (0..self.width).find(|&j| allowed(j) && self.cost[j] < -self.tol.reduced_cost);
            let Some(pc) = entering else {
                return Ok(Stop::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= self.tol.pivot {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        if ratio < bratio || (ratio == bratio && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            let Some((pr, _)) = leave else {
                return Ok(Stop::Unbounded);
            };
            if self.iterations >= self.cap {
                return Err(Error::IterationLimit {
                    iterations: self.iterations,
                    basis: self.basis.clone(),
                });
            }
            self.iterations += 1;
            self.pivot(pr, pc);
        }
    }
}

/// Phase one of the two-phase method for `A x = b, x >= 0`.
pub(crate) fn phase_one(a: &DenseMatrix, b: &[f64], tol: &Tolerances) -> Result<PhaseOne> {
    let (m, n) = (a.rows(), a.cols());
    debug_assert_eq!(b.len(), m);
    let width = n + m;
    let stride = width + 1;
    let mut t = vec![0.0; m * stride];
    let mut sign = vec![1.0; m];
    for r in 0..m {
        if b[r] < 0.0 {
            sign[r] = -1.0;
        }
        for c in 0..n {
            t[r * stride + c] = sign[r] * a[(r, c)];
        }
        t[r * stride + n + r] = 1.0;
        t[r * stride + width] = sign[r] * b[r];
    }
    let mut cost = vec![0.0; stride];
    cost[n..width].fill(1.0);
    // Price out the artificial basis.
    for r in 0..m {
        for c in 0..stride {
            cost[c] -= t[r * stride + c];
        }
    }
    let mut tab = Tableau {
        rows: m,
        width,
        t,
        cost,
        basis: (n..width).collect(),
        iterations: 0,
        cap: tol.iteration_factor * (m + width),
        tol,
    };
    tab.optimize(|_| true)?;

    let objective = -tab.cost[width];
    let scale = 1.0 + b.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    if objective > tol.feasibility * scale {
        // Duals of the artificial columns: y_r = 1 - reduced cost.
        let y = (0..m).map(|r| sign[r] * (1.0 - tab.cost[n + r])).collect();
        return Ok(PhaseOne::Infeasible(y));
    }
    let mut x = vec![0.0; n];
    for r in 0..m {
        let j = tab.basis[r];
        if j < n {
            x[j] = tab.rhs(r).max(0.0);
        }
    }
    Ok(PhaseOne::Feasible(x))
}

/// Solves `max b^T y` subject to `A^T y <= c`, `y >= 0`, for `c >= 0`.
///
/// The slack basis is feasible because `c >= 0`, so only phase two runs. The
/// returned prices are the optimal solution of the primal
/// `min c^T x` subject to `A x >= b`, `x >= 0`.
pub(crate) fn dual_max(a: &DenseMatrix, b: &[f64], c: &[f64], tol: &Tolerances) -> Result<DualOutcome> {
    // a: rows = len(b) (dual variables), cols = len(c) (dual constraints).
    let (ny, nc) = (a.rows(), a.cols());
    debug_assert!(c.iter().all(|&v| v >= 0.0));
    let width = ny + nc;
    let stride = width + 1;
    let mut t = vec![0.0; nc * stride];
    for r in 0..nc {
        for j in 0..ny {
            t[r * stride + j] = a[(j, r)];
        }
        t[r * stride + ny + r] = 1.0;
        t[r * stride + width] = c[r];
    }
    let mut cost = vec![0.0; stride];
    for j in 0..ny {
        cost[j] = -b[j];
    }
    let mut tab = Tableau {
        rows: nc,
        width,
        t,
        cost,
        basis: (ny..width).collect(),
        iterations: 0,
        cap: tol.iteration_factor * (nc + width),
        tol,
    };
    match tab.optimize(|_| true)? {
        Stop::Unbounded => Ok(DualOutcome::Unbounded),
        Stop::Optimal => {
            let mut y = vec![0.0; ny];
            for r in 0..nc {
                let j = tab.basis[r];
                if j < ny {
                    y[j] = tab.rhs(r).max(0.0);
                }
            }
            let prices = (0..nc).map(|r| tab.cost[ny + r].max(0.0)).collect();
            Ok(DualOutcome::Optimal { y, prices })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_one_finds_feasible_point() {
        // x1 + x2 = 1, x1 - x2 = 0
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, -1.0]]).unwrap();
        match phase_one(&a, &[1.0, 0.0], &Tolerances::default()).unwrap() {
            PhaseOne::Feasible(x) => {
                assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
            }
            PhaseOne::Infeasible(_) => panic!("should be feasible"),
        }
    }

    #[test]
    fn phase_one_farkas_vector() {
        // x1 + x2 = -1 has no nonnegative solution.
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        match phase_one(&a, &[-1.0], &Tolerances::default()).unwrap() {
            PhaseOne::Infeasible(y) => {
                let aty = a.tr_matvec(&y);
                assert!(aty.iter().all(|&v| v <= 1e-12));
                assert!(-y[0] > 0.0);
            }
            PhaseOne::Feasible(_) => panic!("should be infeasible"),
        }
    }

    #[test]
    fn dual_max_recovers_primal() {
        // primal: min x1 + x2 s.t. x1 + 2 x2 >= 4, 3 x1 + x2 >= 6 -> x = (1.6, 1.2), value 2.8
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 1.0]]).unwrap();
        match dual_max(&a, &[4.0, 6.0], &[1.0, 1.0], &Tolerances::default()).unwrap() {
            DualOutcome::Optimal { y, prices } => {
                assert!((prices[0] - 1.6).abs() < 1e-12, "{prices:?}");
                assert!((prices[1] - 1.2).abs() < 1e-12);
                assert!((4.0 * y[0] + 6.0 * y[1] - 2.8).abs() < 1e-12);
            }
            DualOutcome::Unbounded => panic!("bounded"),
        }
    }

    #[test]
    fn dual_max_detects_infeasible_primal() {
        // x1 >= 1 and -x1 >= 0 together are infeasible.
        let a = DenseMatrix::from_rows(&[&[1.0], &[-1.0]]).unwrap();
        assert!(matches!(
            dual_max(&a, &[1.0, 0.0], &[1.0], &Tolerances::default()).unwrap(),
            DualOutcome::Unbounded
        ));
    }
}
