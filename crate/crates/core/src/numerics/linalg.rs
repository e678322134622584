use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use super::{all_finite, dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::fmath;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition keeping only the nonzero singular values.
///
/// `m = u * diag(singular_values) * v^T` with `u` of shape `rows x rank` and
/// `v` of shape `cols x rank`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub rank: usize,
}

impl SvdResult {
    pub fn largest(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let us = DenseMatrix::from_fn(self.u.rows(), self.rank, |r, c| {
            self.u[(r, c)] * self.singular_values[c]
        });
        us.matmul(&self.v.transpose())
    }
}

/// One-sided Jacobi SVD.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if !all_finite(m.as_slice()) {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    if m.rows() < m.cols() {
        let t = jacobi_tall(&m.transpose());
        return Ok(SvdResult {
            singular_values: t.singular_values,
            u: t.v,
            v: t.u,
            rank: t.rank,
        });
    }
    Ok(jacobi_tall(m))
}

// Requires rows >= cols. Orthogonalizes the columns of a working copy of `a`.
fn jacobi_tall(a: &DenseMatrix) -> SvdResult {
    let (rows, cols) = (a.rows(), a.cols());
    // Column-major working storage keeps the rotations cache friendly.
    let mut u: Vec<Vec<f64>> = (0..cols).map(|c| a.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| {
            let mut e = vec![0.0; cols];
            e[c] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * fmath::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + fmath::hypot(1.0, zeta));
                let c = 1.0 / fmath::hypot(1.0, t);
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = u.iter().enumerate().map(|(j, col)| (super::norm(col), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let cutoff = sigma_max * f64::EPSILON * (rows.max(cols) as f64);
    let kept: Vec<(f64, usize)> = order.into_iter().filter(|&(s, _)| s > cutoff && s > 0.0).collect();
    let rank = kept.len();

    let mut um = DenseMatrix::zeros(rows, rank);
    let mut vm = DenseMatrix::zeros(cols, rank);
    let mut sv = Vec::with_capacity(rank);
    for (k, &(s, j)) in kept.iter().enumerate() {
        sv.push(s);
        for r in 0..rows {
            um[(r, k)] = u[j][r] / s;
        }
        for r in 0..cols {
            vm[(r, k)] = v[j][r];
        }
    }
    SvdResult {
        singular_values: sv,
        u: um,
        v: vm,
        rank,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Moore-Penrose pseudoinverse via the SVD.
pub fn pseudoinverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    let s = svd(m)?;
    let vs = DenseMatrix::from_fn(s.v.rows(), s.rank, |r, c| s.v[(r, c)] / s.singular_values[c]);
    Ok(vs.matmul(&s.u.transpose()))
}

/// `argmin_p |design p - target|^2 + lambda |p|^2`, minimum-norm when not unique.
pub fn ridge_solve(design: &DenseMatrix, target: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if target.len() != design.rows() {
        return Err(Error::DimensionMismatch {
            context: "ridge target",
            expected: design.rows(),
            found: target.len(),
        });
    }
    if !all_finite(target) || !all_finite(design.as_slice()) || !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid("ridge_solve needs finite inputs and lambda >= 0"));
    }
    let d = design.cols();
    if design.rows() == 0 {
        return Ok(vec![0.0; d]);
    }
    let rhs = design.tr_matvec(target);
    if lambda > 0.0 {
        let mut gram = design.gram();
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        if let Some(p) = cholesky_solve(&gram, &rhs) {
            return Ok(p);
        }
    }
    // Spectral route: p = sum_j v_j sigma_j / (sigma_j^2 + lambda) (u_j . target).
    let s = svd(design)?;
    let mut p = vec![0.0; d];
    for k in 0..s.rank {
        let sigma = s.singular_values[k];
        let coef = (0..design.rows()).map(|r| s.u[(r, k)] * target[r]).sum::<f64>() * sigma / (sigma * sigma + lambda);
        for (i, pi) in p.iter_mut().enumerate() {
            *pi += coef * s.v[(i, k)];
        }
    }
    Ok(p)
}

/// Solves `a x = b` for symmetric positive definite `a`; `None` if `a` is not,
/// including when a pivot falls to rounding level relative to the diagonal.
pub(crate) fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let floor = max_diag * (n as f64) * f64::EPSILON * 64.0;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= floor || !sum.is_finite() {
                    return None;
                }
                l[(i, i)] = fmath::sqrt(sum);
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    Some(x)
}

/// Inverse of a symmetric positive semidefinite matrix, falling back to the
/// pseudoinverse when it is singular.
pub(crate) fn spd_inverse_or_pinv(a: &DenseMatrix) -> Result<DenseMatrix> {
    // Callers form `a` from finite factors, so a non-finite entry is overflow.
    if !all_finite(a.as_slice()) {
        return Err(Error::Numerical("Gram matrix overflowed".into()));
    }
    let n = a.rows();
    let mut cols = Vec::with_capacity(n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        match cholesky_solve(a, &e) {
            Some(x) => cols.push(x),
            None => return pseudoinverse(a),
        }
    }
    Ok(DenseMatrix::from_columns(n, &cols))
}

/// Orthogonal projector onto the column span of a matrix, stored as an
/// orthonormal basis so it can be applied repeatedly.
#[derive(Debug, Clone)]
pub struct SpanProjector {
    basis: DenseMatrix,
}

impl SpanProjector {
    pub fn new(b: &DenseMatrix) -> Result<Self> {
        let s = svd(b)?;
        Ok(SpanProjector { basis: s.u })
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    /// `Pi_B x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let coords = self.basis.tr_matvec(x);
        self.basis.matvec(&coords)
    }

    /// `(Pi_B x, x - Pi_B x)`.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let par = self.project(x);
        let perp = x.iter().zip(&par).map(|(a, b)| a - b).collect();
        (par, perp)
    }
}

/// Splits `x` into its component in the column span of `b` and the orthogonal rest.
pub fn project_span(b: &DenseMatrix, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if b.rows() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "project_span vector",
            expected: b.rows(),
            found: x.len(),
        });
    }
    if !all_finite(x) {
        return Err(Error::invalid("project_span vector is not finite"));
    }
    Ok(SpanProjector::new(b)?.split(x))
}

#[cfg(test)]
mod tests {
    #[test]
    fn singular_gram_uses_pseudoinverse() {
        // Rank 3 Gram in four dimensions must not pass as positive definite.
        let q =
            DenseMatrix::from_rows(&[&[0.3, -0.7, 0.2, 0.9], &[0.5, 0.1, -0.4, 0.2], &[-0.6, 0.8, 0.3, 0.1]]).unwrap();
        let g = q.gram();
        let inv = spd_inverse_or_pinv(&g).unwrap();
        assert!(inv.sub(&pseudoinverse(&g).unwrap()).max_abs() < 1e-8);
    }

    use super::*;
    use crate::numerics::{norm, sub};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn ridge_examples() {
        let id = DenseMatrix::identity(2);
        assert_eq!(ridge_solve(&id, &[1.0, 2.0], 0.0).unwrap(), vec![1.0, 2.0]);
        let p = ridge_solve(&id, &[1.0, 2.0], 1.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        // normal-equation residual (2I) p - I^T t
        let resid = [2.0 * p[0] - 1.0, 2.0 * p[1] - 2.0];
        assert!(norm(&resid) <= 1e-10);
        let row = DenseMatrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        let p = ridge_solve(&row, &[2.0], 0.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_empty_design_is_zero() {
        let empty = DenseMatrix::zeros(0, 3);
        assert_eq!(ridge_solve(&empty, &[], 0.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn ridge_rejects_non_finite() {
        let id = DenseMatrix::identity(2);
        assert!(matches!(
            ridge_solve(&id, &[f64::NAN, 1.0], 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(ridge_solve(&id, &[1.0, 1.0], f64::INFINITY).is_err());
    }

    #[test]
    fn ridge_residual_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let k = rng.gen_range(0..12);
            let d = rng.gen_range(1..8);
            let lambda = if trial % 3 == 0 { 0.0 } else { rng.gen_range(0.0..2.0) };
            let mut a = random_matrix(&mut rng, k, d);
            if trial % 5 == 0 && k > 1 {
                // force rank deficiency
                let r0 = a.row(0).to_vec();
                a.row_mut(1).copy_from_slice(&r0);
            }
            let t: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = ridge_solve(&a, &t, lambda).unwrap();
            let mut g = a.gram();
            for i in 0..d {
                g[(i, i)] += lambda;
            }
            let resid = sub(&g.matvec(&p), &a.tr_matvec(&t));
            assert!(
                norm(&resid) <= 1e-8 * (1.0 + norm(&t)),
                "trial {trial}: {}",
                norm(&resid)
            );
        }
    }

    #[test]
    fn ridge_min_norm_on_rank_deficient() {
        // Columns duplicated: any split of the weight works, min-norm splits evenly.
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        let p = ridge_solve(&a, &[1.0, 2.0], 0.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pinv_examples() {
        let d = DenseMatrix::from_diag(&[2.0, 0.0]);
        let p = pseudoinverse(&d).unwrap();
        assert!(max_abs_diff(&p, &DenseMatrix::from_diag(&[0.5, 0.0])) < 1e-15);
        let id = DenseMatrix::identity(3);
        assert!(max_abs_diff(&pseudoinverse(&id).unwrap(), &id) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 3, 2);
        let mp = pseudoinverse(&m).unwrap();
        assert!(max_abs_diff(&m.matmul(&mp).matmul(&m), &m) <= 1e-9);
    }

    fn penrose_ok(m: &DenseMatrix, p: &DenseMatrix) -> bool {
        let scale = 1.0 + m.max_abs() * p.max_abs();
        let mp = m.matmul(p);
        let pm = p.matmul(m);
        let c1 = max_abs_diff(&mp.matmul(m), m) <= 1e-9 * (1.0 + m.max_abs()) * scale;
        let c2 = max_abs_diff(&pm.matmul(p), p) <= 1e-9 * (1.0 + p.max_abs()) * scale;
        let c3 = max_abs_diff(&mp, &mp.transpose()) <= 1e-9 * scale;
        let c4 = max_abs_diff(&pm, &pm.transpose()) <= 1e-9 * scale;
        c1 && c2 && c3 && c4
    }

    #[test]
    fn pinv_penrose_identities_up_to_50() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let rows = rng.gen_range(1..=50);
            let cols = rng.gen_range(1..=50);
            let mut m = random_matrix(&mut rng, rows, cols);
            if trial % 4 == 0 {
                // low rank product
                let r = rng.gen_range(1..=rows.min(cols));
                let a = random_matrix(&mut rng, rows, r);
                let b = random_matrix(&mut rng, r, cols);
                m = a.matmul(&b);
            }
            let p = pseudoinverse(&m).unwrap();
            assert!(penrose_ok(&m, &p), "trial {trial} {rows}x{cols}");
        }
    }

    #[test]
    fn svd_reconstructs_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let rows = rng.gen_range(1..20);
            let cols = rng.gen_range(1..20);
            let m = random_matrix(&mut rng, rows, cols);
            let s = svd(&m).unwrap();
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(max_abs_diff(&s.reconstruct(), &m) <= 1e-12 * (1.0 + s.largest()));
        }
    }

    #[test]
    fn projection_examples() {
        let e1 = DenseMatrix::from_rows(&[&[1.0], &[0.0]]).unwrap();
        let (par, perp) = project_span(&e1, &[3.0, 4.0]).unwrap();
        assert!(norm(&sub(&par, &[3.0, 0.0])) < 1e-15);
        assert!(norm(&sub(&perp, &[0.0, 4.0])) < 1e-15);

        let full = DenseMatrix::from_rows(&[&[2.0, 1.0], &[0.0, 1.0]]).unwrap();
        let (par, _) = project_span(&full, &[3.0, -4.0]).unwrap();
        assert!(norm(&sub(&par, &[3.0, -4.0])) < 1e-12);

        let diag = DenseMatrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let (par, perp) = project_span(&diag, &[1.0, 0.0]).unwrap();
        assert!(norm(&sub(&par, &[0.5, 0.5])) < 1e-15);
        assert!(dot(&perp, &[1.0, 1.0]).abs() < 1e-15);
    }

    #[test]
    fn projection_with_no_columns_is_zero() {
        let empty = DenseMatrix::zeros(3, 0);
        let (par, perp) = project_span(&empty, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(par, vec![0.0; 3]);
        assert_eq!(perp, vec![1.0, 2.0, 3.0]);
    }
}
