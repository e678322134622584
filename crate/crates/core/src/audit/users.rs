//! Per-user recourse: the sufficient-condition screen, exact top-1 recourse,
//! l1 difficulty, the spectral difficulty bound, and onboarding-set evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    control, item_region, mods_history_edits, mods_reactions, predict, seen_mask, top_n, user_factor, FactorModel,
    ModificationSet, RatingHistory, UserControl,
};
use crate::numerics::{
    dot, feasible_with_rhs, min_l1_recourse, norm, nth_largest, pseudoinverse, sub, svd, DenseMatrix, L1Outcome,
    LpFeasibility, SpanProjector, Tolerances,
};

/// Which ratings a user may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecourseMode {
    /// Every rating in the history is mutable.
    HistoryEdits,
    /// The history is fixed; only a freshly recommended batch can be rated.
    Reactions,
}

impl core::str::FromStr for RecourseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history" | "history-edits" => Ok(RecourseMode::HistoryEdits),
            "reaction" | "reactions" => Ok(RecourseMode::Reactions),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// How a reaction batch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionPolicy {
    Random,
    Top,
}

impl core::str::FromStr for ReactionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ReactionPolicy::Random),
            "top" => Ok(ReactionPolicy::Top),
            other => Err(Error::invalid(format!("unknown policy {other:?}"))),
        }
    }
}

/// Items averaged over in the difficulty bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Items passing the sufficient-condition screen.
    #[default]
    Reachable,
    /// Every unseen item.
    All,
}

impl core::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reachable" => Ok(Averaging::Reachable),
            "all" => Ok(Averaging::All),
            other => Err(Error::invalid(format!("unknown averaging {other:?}"))),
        }
    }
}

/// Reaction batch for a user: the current top-`size` unseen items, or a uniform
/// draw of `size` unseen items returned in ascending id order.
pub fn reaction_set<R: Rng + ?Sized>(
    model: &FactorModel,
    hist: &RatingHistory,
    policy: ReactionPolicy,
    size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::invalid("reaction set size must be at least 1"));
    }
    match policy {
        ReactionPolicy::Top => {
            let p = user_factor(model, hist)?;
            Ok(top_n(model, &p, hist.c_u, hist.omega(), size))
        }
        ReactionPolicy::Random => {
            let seen = seen_mask(model.items(), hist.omega());
            let unseen: Vec<usize> = (0..model.items()).filter(|&i| !seen[i]).collect();
            let mut picked: Vec<usize> = sample(rng, unseen.len(), size.min(unseen.len()))
                .into_iter()
                .map(|k| unseen[k])
                .collect();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// Evaluates the sufficient recourse condition for many items of one user.
///
/// Item `i` is certified reachable when, at the test point
/// `x = Pi_B q_i + Pi_B^perp v0`, its score beats the `n`-th largest score of
/// the other unseen items.
pub struct SufficientScreen<'a> {
    model: &'a FactorModel,
    projector: SpanProjector,
    v0_perp: Vec<f64>,
    seen: Vec<bool>,
    n: usize,
}

impl<'a> SufficientScreen<'a> {
    pub fn new(model: &'a FactorModel, ctrl: &UserControl, omega: &[usize], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        check_control(model, ctrl)?;
        let projector = SpanProjector::new(&ctrl.b)?;
        let (_, v0_perp) = projector.split(&ctrl.v0);
        Ok(SufficientScreen {
            model,
            projector,
            v0_perp,
            seen: seen_mask(model.items(), omega),
            n,
        })
    }

    pub fn test_point(&self, i: usize) -> Vec<f64> {
        let par = self.projector.project(self.model.item_factor(i));
        par.iter().zip(&self.v0_perp).map(|(a, b)| a + b).collect()
    }

    pub fn check(&self, i: usize) -> Result<bool> {
        self.model.check_item(i)?;
        if self.seen[i] {
            return Err(Error::ItemSeen(i));
        }
        let x = self.test_point(i);
        let b = self.model.item_biases();
        let others: Vec<f64> = (0..self.model.items())
            .filter(|&j| j != i && !self.seen[j])
            .map(|j| dot(self.model.item_factor(j), &x) + b[j])
            .collect();
        Ok(dot(self.model.item_factor(i), &x) + b[i] > nth_largest(&others, self.n))
    }

    pub fn unseen(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.seen.len()).filter(|&i| !self.seen[i])
    }
}

fn check_control(model: &FactorModel, ctrl: &UserControl) -> Result<()> {
    if ctrl.b.rows() != model.dim() || ctrl.v0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "user control",
            expected: model.dim(),
            found: ctrl.v0.len(),
        });
    }
    Ok(())
}

/// True when item `i` is certified reachable for the user with control `ctrl`
/// under unbounded ratings.
pub fn recourse_sufficient(
    model: &FactorModel,
    ctrl: &UserControl,
    i: usize,
    omega: &[usize],
    n: usize,
) -> Result<bool> {
    SufficientScreen::new(model, ctrl, omega, n)?.check(i)
}

/// Whether `v0 + B B^+ (q_i - v0)` lies in the top-`n` region of item `i`,
/// decided by counting the unseen items that score at least as high as `i`.
pub fn alignment_check(model: &FactorModel, ctrl: &UserControl, i: usize, omega: &[usize], n: usize) -> Result<bool> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    check_control(model, ctrl)?;
    model.check_item(i)?;
    let seen = seen_mask(model.items(), omega);
    if seen[i] {
        return Err(Error::ItemSeen(i));
    }
    Ok(aligned_at_projection(
        model,
        ctrl,
        &pseudoinverse(&ctrl.b)?,
        &seen,
        i,
        n,
    ))
}

fn aligned_at_projection(
    model: &FactorModel,
    ctrl: &UserControl,
    b_pinv: &DenseMatrix,
    seen: &[bool],
    i: usize,
    n: usize,
) -> bool {
    let qi = model.item_factor(i);
    let coords = b_pinv.matvec(&sub(qi, &ctrl.v0));
    let moved = ctrl.b.matvec(&coords);
    let x: Vec<f64> = ctrl.v0.iter().zip(&moved).map(|(a, b)| a + b).collect();
    let b = model.item_biases();
    let own = dot(qi, &x) + b[i];
    let rivals = (0..model.items())
        .filter(|&j| j != i && !seen[j])
        .filter(|&j| dot(model.item_factor(j), &x) + b[j] >= own)
        .count();
    rivals < n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecourseRecord {
    pub user_id: usize,
    pub mode: RecourseMode,
    pub history_len: usize,
    pub mutable: usize,
    pub n: usize,
    pub unseen: usize,
    pub reachable: usize,
    pub reachable_fraction: f64,
    /// Ids of the unseen items certified reachable, when requested.
    pub per_item: Option<Vec<usize>>,
}

fn build_mods(
    hist: &RatingHistory,
    mode: RecourseMode,
    recommended: Option<&[usize]>,
    lo: f64,
    hi: f64,
) -> Result<ModificationSet> {
    match mode {
        RecourseMode::HistoryEdits => mods_history_edits(hist, lo, hi),
        RecourseMode::Reactions => {
            let rec = recommended.ok_or_else(|| Error::invalid("reactions mode needs a recommended set"))?;
            mods_reactions(hist, rec, lo, hi)
        }
    }
}

/// Fraction of a user's unseen items that pass the sufficient-condition screen.
#[allow(clippy::too_many_arguments)]
pub fn user_recourse(
    model: &FactorModel,
    hist: &RatingHistory,
    mode: RecourseMode,
    n: usize,
    recommended: Option<&[usize]>,
    lo: f64,
    hi: f64,
    keep_items: bool,
) -> Result<RecourseRecord> {
    hist.validate_against(model)?;
    let mods = build_mods(hist, mode, recommended, lo, hi)?;
    let omega = mods.observed();
    let ctrl = control(model, &mods, hist.c_u)?;
    let screen = SufficientScreen::new(model, &ctrl, &omega, n)?;
    let mut reachable = Vec::new();
    let mut unseen = 0;
    for i in screen.unseen() {
        unseen += 1;
        if screen.check(i)? {
            reachable.push(i);
        }
    }
    Ok(RecourseRecord {
        user_id: hist.user_id,
        mode,
        history_len: hist.len(),
        mutable: mods.omega_m.len(),
        n,
        unseen,
        reachable: reachable.len(),
        reachable_fraction: if unseen == 0 {
            0.0
        } else {
            reachable.len() as f64 / unseen as f64
        },
        per_item: keep_items.then_some(reachable),
    })
}

/// Exact top-1 recourse: is there an action `a` in `[lo, hi]` with
/// `G_i (v0 + B a) > h_i`? The witness, when feasible, is such an action.
///
/// The strict margin applies to the region rows only; box rows are not tightened.
pub fn exact_recourse_top1(
    model: &FactorModel,
    ctrl: &UserControl,
    i: usize,
    omega: &[usize],
    lo: f64,
    hi: f64,
    tol: &Tolerances,
) -> Result<LpFeasibility> {
    check_control(model, ctrl)?;
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::invalid("rating bounds need lo <= hi"));
    }
    let (g, h) = item_region(model, i, omega)?;
    let eps = tol.strict_margin(&g);
    let gb = g.matmul(&ctrl.b);
    let gv = g.matvec(&ctrl.v0);
    let k = ctrl.b.cols();
    let mut rows: Vec<f64> = gb.as_slice().to_vec();
    let mut rhs: Vec<f64> = h.iter().zip(&gv).map(|(hv, g0)| hv + eps - g0).collect();
    for j in 0..k {
        if lo.is_finite() {
            rows.extend((0..k).map(|c| if c == j { 1.0 } else { 0.0 }));
            rhs.push(lo);
        }
        if hi.is_finite() {
            rows.extend((0..k).map(|c| if c == j { -1.0 } else { 0.0 }));
            rhs.push(-hi);
        }
    }
    let system = DenseMatrix::new(rhs.len(), k, rows)?;
    feasible_with_rhs(&system, &rhs, tol)
}

/// `|B^+|_2`: the reciprocal of the smallest nonzero singular value of `B`,
/// or zero when `B` has rank zero.
pub fn b_dagger_norm(b: &DenseMatrix) -> Result<f64> {
    let s = svd(b)?;
    Ok(s.singular_values.last().map_or(0.0, |&smin| 1.0 / smin))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifficultyRecord {
    pub user_id: usize,
    pub item_id: usize,
    pub mode: RecourseMode,
    /// Whether the l1 program was solved and found feasible; `None` when not run.
    pub exact_feasible: Option<bool>,
    /// Minimum l1 change from the anchor ratings, when feasible.
    pub exact_cost: Option<f64>,
    /// l2 change of the least-squares action `B^+(q_i - v0) + (I - B^+B) a_hat`.
    pub feasible_point_cost: Option<f64>,
    /// `|B^+| |q_i - (p_u + p_b)|`.
    pub bound: f64,
    pub alignment_holds: bool,
    pub sufficient: bool,
    pub p_b: Vec<f64>,
}

/// Per-user quantities shared by the difficulty computations.
struct UserGeometry {
    omega: Vec<usize>,
    seen: Vec<bool>,
    ctrl: UserControl,
    b_pinv: DenseMatrix,
    b_dagger: f64,
    p_u: Vec<f64>,
    p_b: Vec<f64>,
    /// Anchor ratings for the l2 feasible point: existing ratings for history
    /// edits, bias-free predictions `Q_m p_u` for reactions.
    anchor: Vec<f64>,
}

impl UserGeometry {
    fn new(
        model: &FactorModel,
        hist: &RatingHistory,
        mode: RecourseMode,
        recommended: Option<&[usize]>,
        lo: f64,
        hi: f64,
    ) -> Result<(Self, ModificationSet)> {
        hist.validate_against(model)?;
        let mods = build_mods(hist, mode, recommended, lo, hi)?;
        let ctrl = control(model, &mods, hist.c_u)?;
        let p_u = user_factor(model, hist)?;
        let d = model.dim();
        let (p_b, anchor) = match mode {
            RecourseMode::HistoryEdits => (vec![0.0; d], hist.ratings().to_vec()),
            RecourseMode::Reactions => {
                let s = model.bias_sign().factor();
                let qm = model.q().select_rows(&mods.omega_m);
                let offsets: Vec<f64> = mods
                    .omega_m
                    .iter()
                    .map(|&j| s * (model.item_biases()[j] + hist.c_u + model.mu()))
                    .collect();
                let w = ctrl.w.as_ref().ok_or_else(|| Error::invalid("control lacks W"))?;
                (w.matvec(&qm.tr_matvec(&offsets)), qm.matvec(&p_u))
            }
        };
        let b_pinv = pseudoinverse(&ctrl.b)?;
        let b_dagger = b_dagger_norm(&ctrl.b)?;
        Ok((
            UserGeometry {
                seen: seen_mask(model.items(), &mods.observed()),
                omega: mods.observed(),
                ctrl,
                b_pinv,
                b_dagger,
                p_u,
                p_b,
                anchor,
            },
            mods,
        ))
    }

    fn feasible_point_cost(&self, q: &[f64]) -> f64 {
        // a - a_hat = B^+ (q - v0 - B a_hat)
        let target = sub(&sub(q, &self.ctrl.v0), &self.ctrl.b.matvec(&self.anchor));
        norm(&self.b_pinv.matvec(&target))
    }

    fn bound(&self, q: &[f64]) -> f64 {
        let centre: Vec<f64> = self.p_u.iter().zip(&self.p_b).map(|(a, b)| a + b).collect();
        self.b_dagger * norm(&sub(q, &centre))
    }

    fn record(
        &self,
        model: &FactorModel,
        hist: &RatingHistory,
        mode: RecourseMode,
        i: usize,
        n: usize,
        screen: &SufficientScreen<'_>,
    ) -> Result<DifficultyRecord> {
        let q = model.item_factor(i);
        Ok(DifficultyRecord {
            user_id: hist.user_id,
            item_id: i,
            mode,
            exact_feasible: None,
            exact_cost: None,
            feasible_point_cost: Some(self.feasible_point_cost(q)),
            bound: self.bound(q),
            alignment_holds: aligned_at_projection(model, &self.ctrl, &self.b_pinv, &self.seen, i, n),
            sufficient: screen.check(i)?,
            p_b: self.p_b.clone(),
        })
    }
}

/// Exact top-1 difficulty of item `i` in l1: the least total change to the
/// mutable ratings, measured from the existing ratings (history edits) or the
/// current predictions (reactions), that makes `i` the top recommendation.
#[allow(clippy::too_many_arguments)]
pub fn difficulty_l1(
    model: &FactorModel,
    hist: &RatingHistory,
    i: usize,
    mode: RecourseMode,
    lo: f64,
    hi: f64,
    recommended: Option<&[usize]>,
    tol: &Tolerances,
) -> Result<DifficultyRecord> {
    let (geo, mods) = UserGeometry::new(model, hist, mode, recommended, lo, hi)?;
    let (g, h) = item_region(model, i, &geo.omega)?;
    let a_hat: Vec<f64> = match mode {
        RecourseMode::HistoryEdits => hist.ratings().to_vec(),
        RecourseMode::Reactions => mods
            .omega_m
            .iter()
            .map(|&j| predict(model, &geo.p_u, hist.c_u, j))
            .collect::<Result<_>>()?,
    };
    let eps = tol.strict_margin(&g);
    let outcome = min_l1_recourse(&geo.ctrl.b, &geo.ctrl.v0, &g, &h, &a_hat, lo, hi, eps, tol)?;
    let screen = SufficientScreen::new(model, &geo.ctrl, &geo.omega, 1)?;
    let mut rec = geo.record(model, hist, mode, i, 1, &screen)?;
    match outcome {
        L1Outcome::Optimal { cost, .. } => {
            rec.exact_feasible = Some(true);
            rec.exact_cost = Some(cost);
        }
        L1Outcome::Infeasible => rec.exact_feasible = Some(false),
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifficultyBoundReport {
    pub user_id: usize,
    pub mode: RecourseMode,
    pub averaging: Averaging,
    pub n: usize,
    /// The bound assumes ratings are unrestricted.
    pub unbounded_ratings: bool,
    pub b_dagger_norm: f64,
    pub p_u: Vec<f64>,
    pub p_b: Vec<f64>,
    pub averaged_over: usize,
    /// `|B^+|` times the mean of `|q_i - (p_u + p_b)|` over the averaged items.
    pub bound: Option<f64>,
    pub records: Vec<DifficultyRecord>,
}

/// Spectral upper bound on a user's difficulty of recourse, with per-item
/// feasible-point costs and alignment flags for every unseen item.
pub fn difficulty_bound(
    model: &FactorModel,
    hist: &RatingHistory,
    mode: RecourseMode,
    recommended: Option<&[usize]>,
    n: usize,
    averaging: Averaging,
) -> Result<DifficultyBoundReport> {
    let (geo, _) = UserGeometry::new(model, hist, mode, recommended, f64::NEG_INFINITY, f64::INFINITY)?;
    let screen = SufficientScreen::new(model, &geo.ctrl, &geo.omega, n)?;
    let records = screen
        .unseen()
        .map(|i| geo.record(model, hist, mode, i, n, &screen))
        .collect::<Result<Vec<_>>>()?;
    let chosen: Vec<&DifficultyRecord> = records
        .iter()
        .filter(|r| averaging == Averaging::All || r.sufficient)
        .collect();
    let bound = (!chosen.is_empty()).then(|| chosen.iter().map(|r| r.bound).sum::<f64>() / chosen.len() as f64);
    Ok(DifficultyBoundReport {
        user_id: hist.user_id,
        mode,
        averaging,
        n,
        unbounded_ratings: true,
        b_dagger_norm: geo.b_dagger,
        p_u: geo.p_u.clone(),
        p_b: geo.p_b.clone(),
        averaged_over: chosen.len(),
        bound,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColdStartEval {
    pub candidate: Vec<usize>,
    pub n: usize,
    pub rank: usize,
    pub unseen: usize,
    pub recourse_count: usize,
    /// `max (sigma^2 + lambda) / sigma` over the nonzero singular values of `Q_omega`.
    pub b_norm_dagger: f64,
}

/// Evaluates an onboarding set for a new user, whose anchor is zero and whose
/// control is `B = W Q_omega^T`.
pub fn coldstart_eval(model: &FactorModel, candidate: &[usize], n: usize) -> Result<ColdStartEval> {
    if candidate.is_empty() {
        return Err(Error::invalid("onboarding set is empty"));
    }
    let mods = ModificationSet::new(
        Vec::new(),
        Vec::new(),
        candidate.to_vec(),
        f64::NEG_INFINITY,
        f64::INFINITY,
    )?;
    let w = model.gram_inverse(&mods.omega_m)?;
    let q_omega = model.q().select_rows(candidate);
    let ctrl = UserControl {
        b: w.matmul(&q_omega.transpose()),
        v0: vec![0.0; model.dim()],
        w: Some(w),
    };
    let screen = SufficientScreen::new(model, &ctrl, candidate, n)?;
    let mut unseen = 0;
    let mut count = 0;
    for i in screen.unseen() {
        unseen += 1;
        if screen.check(i)? {
            count += 1;
        }
    }
    let s = svd(&q_omega)?;
    let lambda = model.lambda();
    let b_norm_dagger = s
        .singular_values
        .iter()
        .map(|&sig| (sig * sig + lambda) / sig)
        .fold(0.0, f64::max);
    Ok(ColdStartEval {
        candidate: candidate.to_vec(),
        n,
        rank: s.rank,
        unseen,
        recourse_count: count,
        b_norm_dagger,
    })
}
