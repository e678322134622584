//! Linear preference models, the top-N policy, and the decomposition of a user's
//! reachable latent factors into an anchor and control directions.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, dot, DenseMatrix};

/// How item/user/global biases enter the least-squares user update.
///
/// `Additive` fits `Q p ~ r + b + c + mu`; `Residual` fits the conventional
/// `Q p ~ r - b - c - mu`. Predictions are `mu + b_i + c_u + q_i . p` either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasSign {
    #[default]
    Additive,
    Residual,
}

impl BiasSign {
    pub fn factor(self) -> f64 {
        match self {
            BiasSign::Additive => 1.0,
            BiasSign::Residual => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BiasSign::Additive => "additive",
            BiasSign::Residual => "residual",
        }
    }
}

impl core::str::FromStr for BiasSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" | "+" => Ok(BiasSign::Additive),
            "residual" | "-" => Ok(BiasSign::Residual),
            other => Err(Error::invalid(alloc::format!("unknown bias sign {other:?}"))),
        }
    }
}

/// Trained factors of a linear preference model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorModel {
    q: DenseMatrix,
    b: Vec<f64>,
    mu: f64,
    lambda: f64,
    bias_sign: BiasSign,
    users: Option<UserFactors>,
}

/// Optional per-user factors and biases shipped with a model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserFactors {
    pub p: DenseMatrix,
    pub c: Vec<f64>,
}

impl FactorModel {
    pub fn new(q: DenseMatrix, b: Vec<f64>, mu: f64, lambda: f64, bias_sign: BiasSign) -> Result<Self> {
        if q.cols() == 0 || q.rows() == 0 {
            return Err(Error::invalid("model needs d >= 1 and m >= 1"));
        }
        if b.len() != q.rows() {
            return Err(Error::DimensionMismatch {
                context: "item biases",
                expected: q.rows(),
                found: b.len(),
            });
        }
        if !numerics::all_finite(&b) || !mu.is_finite() || !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid("model biases must be finite and lambda >= 0"));
        }
        Ok(FactorModel {
            q,
            b,
            mu,
            lambda,
            bias_sign,
            users: None,
        })
    }

    /// Model without biases.
    pub fn unbiased(q: DenseMatrix, lambda: f64) -> Result<Self> {
        let m = q.rows();
        Self::new(q, vec![0.0; m], 0.0, lambda, BiasSign::Additive)
    }

    pub fn with_users(mut self, p: DenseMatrix, c: Vec<f64>) -> Result<Self> {
        if p.cols() != self.dim() || c.len() != p.rows() {
            return Err(Error::DimensionMismatch {
                context: "user factors",
                expected: self.dim(),
                found: p.cols(),
            });
        }
        if !numerics::all_finite(&c) {
            return Err(Error::invalid("user biases must be finite"));
        }
        self.users = Some(UserFactors { p, c });
        Ok(self)
    }

    pub fn with_bias_sign(mut self, sign: BiasSign) -> Self {
        self.bias_sign = sign;
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.q.cols()
    }

    #[inline]
    pub fn items(&self) -> usize {
        self.q.rows()
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    #[inline]
    pub fn item_factor(&self, i: usize) -> &[f64] {
        self.q.row(i)
    }

    pub fn item_biases(&self) -> &[f64] {
        &self.b
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bias_sign(&self) -> BiasSign {
        self.bias_sign
    }

    pub fn users(&self) -> Option<&UserFactors> {
        self.users.as_ref()
    }

    pub fn has_biases(&self) -> bool {
        self.mu != 0.0 || self.b.iter().any(|&v| v != 0.0)
    }

    /// Sub-model over the listed items, in the listed order. User factors are kept.
    pub fn restrict_items(&self, items: &[usize]) -> Result<FactorModel> {
        for &i in items {
            self.check_item(i)?;
        }
        let mut out = FactorModel::new(
            self.q.select_rows(items),
            items.iter().map(|&i| self.b[i]).collect(),
            self.mu,
            self.lambda,
            self.bias_sign,
        )?;
        out.users = self.users.clone();
        Ok(out)
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.items() {
            return Err(Error::ItemOutOfRange {
                item: i,
                items: self.items(),
            });
        }
        Ok(())
    }

    /// Rating-space offset `b_i + c_u + mu` entering the user update for item `i`.
    fn bias_offset(&self, i: usize, c_u: f64) -> f64 {
        self.b[i] + c_u + self.mu
    }

    /// The update of this model over support `omega` as an affine map
    /// `p = A (r + dvec)`, i.e. `A = W Q_omega^T` and `dvec = +-(b_omega + c_u + mu)`.
    pub fn affine_update(&self, omega: &[usize], c_u: f64) -> Result<AffineUpdate> {
        let w = self.gram_inverse(omega)?;
        let a = w.matmul(&self.q.select_rows(omega).transpose());
        let s = self.bias_sign.factor();
        let dvec = omega.iter().map(|&i| s * self.bias_offset(i, c_u)).collect();
        AffineUpdate::new(a, omega.to_vec(), dvec)
    }

    /// `(Q_omega^T Q_omega + lambda I)^{-1}`, pseudoinverse when singular.
    pub fn gram_inverse(&self, omega: &[usize]) -> Result<DenseMatrix> {
        for &i in omega {
            self.check_item(i)?;
        }
        let mut gram = self.q.select_rows(omega).gram();
        for k in 0..self.dim() {
            gram[(k, k)] += self.lambda;
        }
        numerics::linalg_spd_inverse(&gram)
    }
}

/// One user's observed ratings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingHistory {
    pub user_id: usize,
    omega: Vec<usize>,
    ratings: Vec<f64>,
    pub c_u: f64,
}

impl RatingHistory {
    pub fn new(user_id: usize, omega: Vec<usize>, ratings: Vec<f64>, c_u: f64) -> Result<Self> {
        if omega.len() != ratings.len() {
            return Err(Error::DimensionMismatch {
                context: "history ratings",
                expected: omega.len(),
                found: ratings.len(),
            });
        }
        let distinct: BTreeSet<usize> = omega.iter().copied().collect();
        if distinct.len() != omega.len() {
            return Err(Error::invalid("rating history has duplicate items"));
        }
        if !numerics::all_finite(&ratings) || !c_u.is_finite() {
            return Err(Error::invalid("ratings must be finite"));
        }
        Ok(RatingHistory {
            user_id,
            omega,
            ratings,
            c_u,
        })
    }

    pub fn empty(user_id: usize) -> Self {
        RatingHistory {
            user_id,
            omega: Vec::new(),
            ratings: Vec::new(),
            c_u: 0.0,
        }
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn ratings(&self) -> &[f64] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn validate_against(&self, model: &FactorModel) -> Result<()> {
        self.omega.iter().try_for_each(|&i| model.check_item(i))
    }
}

/// Allowed rating changes: immutable `(omega0, r0)`, mutable `omega_m`, and the
/// rating interval `[rating_lo, rating_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModificationSet {
    pub omega0: Vec<usize>,
    pub r0: Vec<f64>,
    pub omega_m: Vec<usize>,
    pub rating_lo: f64,
    pub rating_hi: f64,
}

impl ModificationSet {
    pub fn new(omega0: Vec<usize>, r0: Vec<f64>, omega_m: Vec<usize>, lo: f64, hi: f64) -> Result<Self> {
        if omega0.len() != r0.len() {
            return Err(Error::DimensionMismatch {
                context: "immutable ratings",
                expected: omega0.len(),
                found: r0.len(),
            });
        }
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid("rating bounds need lo <= hi"));
        }
        let fixed: BTreeSet<usize> = omega0.iter().copied().collect();
        let mutable: BTreeSet<usize> = omega_m.iter().copied().collect();
        if fixed.len() != omega0.len() || mutable.len() != omega_m.len() {
            return Err(Error::invalid("modification set has duplicate items"));
        }
        if !fixed.is_disjoint(&mutable) {
            return Err(Error::invalid("immutable and mutable items overlap"));
        }
        Ok(ModificationSet {
            omega0,
            r0,
            omega_m,
            rating_lo: lo,
            rating_hi: hi,
        })
    }

    /// `omega0` followed by `omega_m`.
    pub fn observed(&self) -> Vec<usize> {
        let mut out = self.omega0.clone();
        out.extend_from_slice(&self.omega_m);
        out
    }
}

/// Reachable user factors `p = v0 + B a` for mutable ratings `a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserControl {
    pub b: DenseMatrix,
    pub v0: Vec<f64>,
    /// `(Q_omega^T Q_omega + lambda I)^{-1}` for matrix factorization models.
    pub w: Option<DenseMatrix>,
}

impl UserControl {
    /// `v0 + B a`.
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        let ba = self.b.matvec(a);
        self.v0.iter().zip(&ba).map(|(x, y)| x + y).collect()
    }
}

/// General affine user update `p = A (r + dvec)` over the items in `support`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineUpdate {
    pub a: DenseMatrix,
    pub support: Vec<usize>,
    pub dvec: Vec<f64>,
}

impl AffineUpdate {
    pub fn new(a: DenseMatrix, support: Vec<usize>, dvec: Vec<f64>) -> Result<Self> {
        if a.cols() != support.len() || dvec.len() != support.len() {
            return Err(Error::DimensionMismatch {
                context: "affine update support",
                expected: support.len(),
                found: a.cols(),
            });
        }
        Ok(AffineUpdate { a, support, dvec })
    }

    fn column_of(&self, item: usize) -> Result<usize> {
        self.support
            .iter()
            .position(|&s| s == item)
            .ok_or_else(|| Error::invalid(alloc::format!("item {item} outside the update support")))
    }
}

/// `mu + b_i + c_u + q_i . p`.
pub fn predict(model: &FactorModel, p: &[f64], c_u: f64, i: usize) -> Result<f64> {
    model.check_item(i)?;
    if p.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "user factor",
            expected: model.dim(),
            found: p.len(),
        });
    }
    Ok(model.mu + model.b[i] + c_u + dot(model.item_factor(i), p))
}

/// Least-squares user factor for a rating history; zero for an empty history.
pub fn user_factor(model: &FactorModel, hist: &RatingHistory) -> Result<Vec<f64>> {
    hist.validate_against(model)?;
    let s = model.bias_sign.factor();
    let target: Vec<f64> = hist
        .omega
        .iter()
        .zip(&hist.ratings)
        .map(|(&i, &r)| r + s * model.bias_offset(i, hist.c_u))
        .collect();
    numerics::ridge_solve(&model.q.select_rows(&hist.omega), &target, model.lambda)
}

pub(crate) fn seen_mask(m: usize, omega: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; m];
    for &i in omega {
        if i < m {
            mask[i] = true;
        }
    }
    mask
}

/// The `n` unseen items with the highest predicted rating, ties to the lower id.
pub fn top_n(model: &FactorModel, p: &[f64], c_u: f64, omega: &[usize], n: usize) -> Vec<usize> {
    assert!(n >= 1, "top_n needs n >= 1");
    let seen = seen_mask(model.items(), omega);
    let mut scored: Vec<(f64, usize)> = (0..model.items())
        .filter(|&i| !seen[i])
        .map(|i| (model.mu + model.b[i] + c_u + dot(model.item_factor(i), p), i))
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, by_rank);
        scored.truncate(n);
    }
    scored.sort_by(by_rank);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Control matrix and anchor `(B, v0)` for a matrix factorization model:
/// `W = (Q_omega^T Q_omega + lambda I)^{-1}`, `B = W Q_m^T`,
/// `v0 = W Q_0^T r0 +- W Q_omega^T (b_omega + c_u + mu)`.
pub fn control(model: &FactorModel, mods: &ModificationSet, c_u: f64) -> Result<UserControl> {
    let observed = mods.observed();
    let w = model.gram_inverse(&observed)?;
    let b = w.matmul(&model.q.select_rows(&mods.omega_m).transpose());
    let s = model.bias_sign.factor();
    let mut rating_side = vec![0.0; model.dim()];
    for (&i, &r) in mods.omega0.iter().zip(&mods.r0) {
        for (acc, q) in rating_side.iter_mut().zip(model.item_factor(i)) {
            *acc += q * r;
        }
    }
    for &i in &observed {
        let off = s * model.bias_offset(i, c_u);
        for (acc, q) in rating_side.iter_mut().zip(model.item_factor(i)) {
            *acc += q * off;
        }
    }
    let v0 = w.matvec(&rating_side);
    Ok(UserControl { b, v0, w: Some(w) })
}

/// `(B, v0) = (A_{omega_m}, A_{omega_0} r0 + A dvec)` for a general affine update.
pub fn affine_control(update: &AffineUpdate, mods: &ModificationSet) -> Result<UserControl> {
    let mcols: Vec<usize> = mods
        .omega_m
        .iter()
        .map(|&i| update.column_of(i))
        .collect::<Result<_>>()?;
    let b = update.a.select_cols(&mcols);
    let mut v0 = update.a.matvec(&update.dvec);
    for (&i, &r) in mods.omega0.iter().zip(&mods.r0) {
        let col = update.column_of(i)?;
        for (k, v) in v0.iter_mut().enumerate() {
            *v += update.a[(k, col)] * r;
        }
    }
    Ok(UserControl { b, v0, w: None })
}

/// Top-1 region of item `i` as `G_i p > h_i`: one row `q_i - q_j` with
/// right side `b_j - b_i` for every unseen `j != i`, in ascending `j`.
pub fn item_region(model: &FactorModel, i: usize, omega: &[usize]) -> Result<(DenseMatrix, Vec<f64>)> {
    model.check_item(i)?;
    let seen = seen_mask(model.items(), omega);
    if seen[i] {
        return Err(Error::ItemSeen(i));
    }
    let qi = model.item_factor(i);
    let mut data = Vec::new();
    let mut h = Vec::new();
    for j in (0..model.items()).filter(|&j| j != i && !seen[j]) {
        data.extend(qi.iter().zip(model.item_factor(j)).map(|(a, b)| a - b));
        h.push(model.b[j] - model.b[i]);
    }
    let g = DenseMatrix::new(h.len(), model.dim(), data)?;
    Ok((g, h))
}

/// History edits: every observed rating is mutable.
pub fn mods_history_edits(hist: &RatingHistory, lo: f64, hi: f64) -> Result<ModificationSet> {
    ModificationSet::new(Vec::new(), Vec::new(), hist.omega.clone(), lo, hi)
}

/// Reactions: the history is fixed and only the recommended items can be rated.
pub fn mods_reactions(hist: &RatingHistory, recommended: &[usize], lo: f64, hi: f64) -> Result<ModificationSet> {
    if recommended.iter().any(|i| hist.omega.contains(i)) {
        return Err(Error::invalid("recommended items overlap the rating history"));
    }
    ModificationSet::new(hist.omega.clone(), hist.ratings.clone(), recommended.to_vec(), lo, hi)
}
