//! Dense linear algebra and small linear-program kernels used by every audit.
//!
//! Everything here is a pure function of its inputs. Tolerances that influence
//! decisions are gathered in [`Tolerances`] so reports can echo them.

mod linalg;
mod lp;
mod matrix;
mod simplex;

pub(crate) use linalg::spd_inverse_or_pinv as linalg_spd_inverse;
pub use linalg::{project_span, pseudoinverse, ridge_solve, svd, SpanProjector, SvdResult};
pub use lp::{
    feasible_with_rhs, lp_strict_feasible, min_l1_recourse, min_l1_with_rhs, L1Outcome, LpFeasibility, LpStatus,
};
pub use matrix::DenseMatrix;

use alloc::vec::Vec;
use serde::Serialize;

use crate::fmath;

/// Numerical tolerances for every decision made by the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Strict inequalities `G p > h` become `G p >= h + eps` with
    /// `eps = eps_scale * (1 + max row norm of G)` unless `eps_override` is set.
    pub eps_scale: f64,
    pub eps_override: Option<f64>,
    /// Phase-one objective at or below this value counts as feasible.
    pub feasibility: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot: f64,
    /// Reduced costs above `-reduced_cost` count as nonnegative.
    pub reduced_cost: f64,
    /// Simplex iteration cap is `iteration_factor * (rows + cols)`.
    pub iteration_factor: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_scale: 1e-6,
            eps_override: None,
            feasibility: 1e-9,
            pivot: 1e-11,
            reduced_cost: 1e-11,
            iteration_factor: 50,
        }
    }
}

impl Tolerances {
    /// Margin used to realize strict inequalities for the constraint matrix `g`.
    pub fn strict_margin(&self, g: &DenseMatrix) -> f64 {
        if let Some(eps) = self.eps_override {
            return eps;
        }
        let max_row = (0..g.rows()).map(|r| norm(g.row(r))).fold(0.0, f64::max);
        self.eps_scale * (1.0 + max_row)
    }
}

/// The `n`-th largest value of `values`, counting duplicates.
///
/// Returns `f64::NEG_INFINITY` when there are fewer than `n` values, which makes
/// a threshold test `x > nth_largest(..)` vacuously true.
///
/// # Panics
///
/// If `n == 0`.
pub fn nth_largest(values: &[f64], n: usize) -> f64 {
    assert!(n >= 1, "nth_largest needs n >= 1");
    if values.len() < n {
        return f64::NEG_INFINITY;
    }
    let mut buf: Vec<f64> = values.to_vec();
    let (_, nth, _) = buf.select_nth_unstable_by(n - 1, |a, b| b.total_cmp(a));
    *nth
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    fmath::sqrt(dot(a, a))
}

pub fn norm_l1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
