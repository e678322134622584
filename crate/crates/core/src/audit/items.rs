//! Item availability: aligned-reachability margins, exact top-1 availability,
//! sampling lower bounds and popularity comparisons.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{item_region, seen_mask, FactorModel};
use crate::numerics::{dot, lp_strict_feasible, nth_largest, DenseMatrix, LpFeasibility, Tolerances};
use crate::serde_util::{f64_lossless, opt_f64_lossless};

/// Aligned-reachability margin of item `i`:
/// `|q_i|^2 + b_i - maxN_{j unseen, j != i} (q_j . q_i + b_j)`.
///
/// With fewer than `n` competitors the margin is `+inf`.
pub fn aligned_delta(model: &FactorModel, i: usize, omega: &[usize], n: usize) -> Result<f64> {
    model.check_item(i)?;
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let seen = seen_mask(model.items(), omega);
    if seen[i] {
        return Err(Error::ItemSeen(i));
    }
    let qi = model.item_factor(i);
    let b = model.item_biases();
    let others: Vec<f64> = (0..model.items())
        .filter(|&j| j != i && !seen[j])
        .map(|j| dot(model.item_factor(j), qi) + b[j])
        .collect();
    Ok(dot(qi, qi) + b[i] - nth_largest(&others, n))
}

/// Margins for the items in `block` with nothing seen, from one block of the
/// item Gram matrix `Q_block Q^T`.
pub fn delta_block(model: &FactorModel, block: Range<usize>, n_prime: usize) -> Vec<f64> {
    assert!(n_prime >= 1, "N' must be at least 1");
    let m = model.items();
    let rows: Vec<usize> = block.clone().collect();
    let gram = model.q().select_rows(&rows).matmul(&model.q().transpose());
    let b = model.item_biases();
    let mut others = Vec::with_capacity(m.saturating_sub(1));
    rows.iter()
        .enumerate()
        .map(|(r, &i)| {
            others.clear();
            let row = gram.row(r);
            others.extend((0..m).filter(|&j| j != i).map(|j| row[j] + b[j]));
            row[i] + b[i] - nth_largest(&others, n_prime)
        })
        .collect()
}

/// Exact top-1 availability of item `i`: strict feasibility of its region.
///
/// The witness is a user factor recommending `i`; the certificate is a convex
/// combination of competitors that dominates `i` once biases are accounted for.
pub fn exact_top1_available(model: &FactorModel, i: usize, omega: &[usize], tol: &Tolerances) -> Result<LpFeasibility> {
    let (g, h) = item_region(model, i, omega)?;
    lp_strict_feasible(&g, &h, tol.strict_margin(&g), tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemAuditRecord {
    pub item_id: usize,
    #[serde(serialize_with = "f64_lossless")]
    pub delta: f64,
    pub aligned_reachable: bool,
    pub exact_top1_available: Option<bool>,
    pub n_ratings: Option<usize>,
    #[serde(serialize_with = "opt_f64_lossless")]
    pub mean_rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemAuditSummary {
    pub n: usize,
    pub n_h: usize,
    pub n_prime: usize,
    pub items: usize,
    pub aligned_reachable: usize,
    pub availability_lower_bound: f64,
    pub exact_top1_fraction: Option<f64>,
    pub block_size: usize,
    pub tolerances: Tolerances,
    pub per_item: Vec<ItemAuditRecord>,
}

impl ItemAuditSummary {
    /// Fills in per-item rating counts and means; items without ratings get none.
    pub fn attach_popularity(&mut self, counts: &[usize], means: &[f64]) {
        for rec in &mut self.per_item {
            let count = counts.get(rec.item_id).copied().unwrap_or(0);
            rec.n_ratings = Some(count);
            rec.mean_rating = means.get(rec.item_id).copied().filter(|v| count > 0 && v.is_finite());
        }
    }

    pub fn available_flags(&self) -> Vec<bool> {
        self.per_item.iter().map(|r| r.aligned_reachable).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemAuditOptions {
    /// Rows of the item Gram matrix materialized at once.
    pub block_size: usize,
    /// Also run the exact top-1 LP per item.
    pub exact: bool,
    pub tolerances: Tolerances,
}

impl Default for ItemAuditOptions {
    fn default() -> Self {
        ItemAuditOptions {
            block_size: 256,
            exact: false,
            tolerances: Tolerances::default(),
        }
    }
}

/// Model audit with nothing seen: an item is counted as available when it is
/// aligned-reachable at `N' = N + N_h`, which covers every user who has seen
/// fewer than `N_h` items.
pub fn item_audit(model: &FactorModel, n: usize, n_h: usize, opts: &ItemAuditOptions) -> Result<ItemAuditSummary> {
    if n == 0 || opts.block_size == 0 {
        return Err(Error::invalid("N and the block size must be at least 1"));
    }
    let m = model.items();
    let mut deltas = Vec::with_capacity(m);
    let mut start = 0;
    while start < m {
        let end = (start + opts.block_size).min(m);
        deltas.extend(delta_block(model, start..end, n + n_h));
        start = end;
    }
    let exact = if opts.exact {
        let flags = (0..m)
            .map(|i| exact_top1_available(model, i, &[], &opts.tolerances).map(|r| r.is_feasible()))
            .collect::<Result<Vec<bool>>>()?;
        Some(flags)
    } else {
        None
    };
    summarize_items(n, n_h, deltas, exact, opts)
}

/// Assembles a summary from per-item margins (and optional exact flags) in item order.
pub fn summarize_items(
    n: usize,
    n_h: usize,
    deltas: Vec<f64>,
    exact: Option<Vec<bool>>,
    opts: &ItemAuditOptions,
) -> Result<ItemAuditSummary> {
    let m = deltas.len();
    // +inf is legitimate (fewer rivals than N); NaN means overflow.
    if let Some(i) = deltas.iter().position(|d| d.is_nan()) {
        return Err(Error::Numerical(alloc::format!(
            "alignment margin of item {i} is not a number"
        )));
    }
    if let Some(flags) = &exact {
        if flags.len() != m {
            return Err(Error::DimensionMismatch {
                context: "exact availability flags",
                expected: m,
                found: flags.len(),
            });
        }
    }
    let per_item: Vec<ItemAuditRecord> = deltas
        .into_iter()
        .enumerate()
        .map(|(i, delta)| ItemAuditRecord {
            item_id: i,
            delta,
            aligned_reachable: delta > 0.0,
            exact_top1_available: exact.as_ref().map(|f| f[i]),
            n_ratings: None,
            mean_rating: None,
        })
        .collect();
    let reachable = per_item.iter().filter(|r| r.aligned_reachable).count();
    let fraction = |count: usize| if m == 0 { 0.0 } else { count as f64 / m as f64 };
    Ok(ItemAuditSummary {
        n,
        n_h,
        n_prime: n + n_h,
        items: m,
        aligned_reachable: reachable,
        availability_lower_bound: fraction(reachable),
        exact_top1_fraction: exact.as_ref().map(|f| fraction(f.iter().filter(|&&x| x).count())),
        block_size: opts.block_size,
        tolerances: opts.tolerances,
        per_item,
    })
}

/// Items strictly inside their top-`n` region at one or more probes.
///
/// An item counts at a probe when its score beats the `n`-th largest score of the
/// other unseen items, so ties never count and the result stays a lower bound on
/// availability.
pub fn sampled_available_items(
    model: &FactorModel,
    probes: &[Vec<f64>],
    omega: &[usize],
    n: usize,
) -> Result<Vec<bool>> {
    if probes.is_empty() || n == 0 {
        return Err(Error::invalid("sampling needs at least one probe and N >= 1"));
    }
    let seen = seen_mask(model.items(), omega);
    let unseen: Vec<usize> = (0..model.items()).filter(|&i| !seen[i]).collect();
    let b = model.item_biases();
    let mut hit = vec![false; model.items()];
    let mut scores = vec![0.0; unseen.len()];
    let mut scratch = Vec::with_capacity(unseen.len());
    for probe in probes {
        if probe.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                context: "probe",
                expected: model.dim(),
                found: probe.len(),
            });
        }
        for (s, &j) in scores.iter_mut().zip(&unseen) {
            *s = dot(model.item_factor(j), probe) + b[j];
        }
        // Beating the n-th largest of the others is the same as beating the
        // (n+1)-th largest of everyone.
        scratch.clear();
        scratch.extend_from_slice(&scores);
        let threshold = nth_largest(&scratch, n + 1);
        for (&s, &j) in scores.iter().zip(&unseen) {
            if s > threshold {
                hit[j] = true;
            }
        }
    }
    Ok(hit)
}

/// Fraction of unseen items found available by [`sampled_available_items`].
pub fn sampled_availability(model: &FactorModel, probes: &[Vec<f64>], omega: &[usize], n: usize) -> Result<f64> {
    let hit = sampled_available_items(model, probes, omega, n)?;
    let unseen = model.items() - seen_mask(model.items(), omega).iter().filter(|&&s| s).count();
    if unseen == 0 {
        return Ok(0.0);
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / unseen as f64)
}

/// Slack `A_ii - maxN_{j != i} A_ij` of the item Gram matrix `A = Q Q^T`,
/// ignoring biases. Built from the full explicit Gram matrix.
pub fn gram_constraint_report(model: &FactorModel, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let a: DenseMatrix = model.q().matmul(&model.q().transpose());
    let m = a.rows();
    Ok((0..m)
        .map(|i| {
            let off: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| a[(i, j)]).collect();
            a[(i, i)] - nth_largest(&off, n)
        })
        .collect())
}

/// Empirical CDF sampled at every distinct observed value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cdf {
    pub series: &'static str,
    pub points: Vec<(f64, f64)>,
}

impl Cdf {
    pub fn from_values(series: &'static str, mut values: Vec<f64>) -> Cdf {
        values.retain(|v| v.is_finite());
        values.sort_by(f64::total_cmp);
        let total = values.len() as f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (k, &v) in values.iter().enumerate() {
            let y = (k + 1) as f64 / total;
            match points.last_mut() {
                Some(last) if last.0 == v => last.1 = y,
                _ => points.push((v, y)),
            }
        }
        Cdf { series, points }
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }
}

/// Popularity of available versus unavailable items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopularityStats {
    /// CDFs of the number of ratings: available, unavailable, all.
    pub by_count: [Cdf; 3],
    /// CDFs of the mean rating over items with at least one rating.
    pub by_mean: [Cdf; 3],
}

pub fn popularity_stats(counts: &[usize], means: &[f64], available: &[bool]) -> Result<PopularityStats> {
    let m = available.len();
    if counts.len() != m || means.len() != m {
        return Err(Error::DimensionMismatch {
            context: "popularity inputs",
            expected: m,
            found: counts.len().min(means.len()),
        });
    }
    let pick = |want: Option<bool>, by_mean: bool| -> Vec<f64> {
        (0..m)
            .filter(|&i| want.is_none_or(|w| available[i] == w))
            .filter(|&i| !by_mean || counts[i] > 0)
            .map(|i| if by_mean { means[i] } else { counts[i] as f64 })
            .collect()
    };
    let build = |by_mean: bool, prefix: [&'static str; 3]| {
        [
            Cdf::from_values(prefix[0], pick(Some(true), by_mean)),
            Cdf::from_values(prefix[1], pick(Some(false), by_mean)),
            Cdf::from_values(prefix[2], pick(None, by_mean)),
        ]
    };
    Ok(PopularityStats {
        by_count: build(false, ["count_available", "count_unavailable", "count_all"]),
        by_mean: build(true, ["mean_available", "mean_unavailable", "mean_all"]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{top_n, BiasSign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_from(rows: &[&[f64]]) -> FactorModel {
        FactorModel::unbiased(DenseMatrix::from_rows(rows).unwrap(), 0.0).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, m: usize, d: usize, biased: bool) -> FactorModel {
        let q = DenseMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
        let b = (0..m)
            .map(|_| if biased { rng.gen_range(-0.3..0.3) } else { 0.0 })
            .collect();
        FactorModel::new(q, b, 0.0, 0.0, BiasSign::Additive).unwrap()
    }

    #[test]
    fn delta_examples() {
        let model = FactorModel::unbiased(DenseMatrix::identity(3), 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(aligned_delta(&model, i, &[], 1).unwrap(), 1.0);
        }
        let dup = model_from(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(aligned_delta(&dup, 0, &[], 1).unwrap(), 0.0);

        let fig = model_from(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0], &[0.4, 0.4]]);
        let delta = aligned_delta(&fig, 3, &[], 1).unwrap();
        assert!((delta - (0.32 - 0.4)).abs() < 1e-12);
        assert!(aligned_delta(&fig, 3, &[3], 1).is_err());
        assert_eq!(aligned_delta(&fig, 0, &[], 5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn block_matches_direct_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 40, 3, true);
        for n in [1, 3, 7] {
            let blocked = delta_block(&model, 0..40, n);
            for (i, &d) in blocked.iter().enumerate() {
                assert!((d - aligned_delta(&model, i, &[], n).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn audit_orthonormal_is_fully_available() {
        let model = FactorModel::unbiased(DenseMatrix::identity(5), 0.0).unwrap();
        let s = item_audit(&model, 2, 1, &ItemAuditOptions::default()).unwrap();
        assert_eq!(s.availability_lower_bound, 1.0);
        assert_eq!(s.n_prime, 3);
    }

    #[test]
    fn audit_duplicated_item() {
        // Item (1,1,0)/sqrt2 repeated four times next to three orthonormal items.
        let r = core::f64::consts::FRAC_1_SQRT_2;
        let mut rows: Vec<&[f64]> = vec![&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]];
        let dup = [r, r, 0.0];
        for _ in 0..4 {
            rows.push(&dup);
        }
        let model = model_from(&rows);
        let opts = ItemAuditOptions {
            block_size: 2,
            ..Default::default()
        };
        let s = item_audit(&model, 2, 0, &opts).unwrap();
        for rec in &s.per_item {
            // Brute force: sort all scores at the probe q_i and locate i.
            let probe = model.item_factor(rec.item_id).to_vec();
            let mut scores: Vec<(f64, usize)> = (0..model.items())
                .map(|j| (dot(model.item_factor(j), &probe), j))
                .collect();
            scores.sort_by(|a, b| b.0.total_cmp(&a.0));
            let own = dot(&probe, &probe);
            let strictly_better_or_tied = scores.iter().filter(|(s, j)| *j != rec.item_id && *s >= own).count();
            assert_eq!(
                rec.aligned_reachable,
                strictly_better_or_tied < 2,
                "item {}",
                rec.item_id
            );
        }
        assert!(s.per_item[3..].iter().all(|r| !r.aligned_reachable));
        assert_eq!(s.aligned_reachable, 3);
    }

    #[test]
    fn exact_top1_examples() {
        let line = model_from(&[&[1.0], &[-1.0]]);
        let tol = Tolerances::default();
        assert!(exact_top1_available(&line, 0, &[], &tol).unwrap().is_feasible());
        assert!(exact_top1_available(&line, 1, &[], &tol).unwrap().is_feasible());

        let mid = model_from(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let r = exact_top1_available(&mid, 2, &[], &tol).unwrap();
        assert!(!r.is_feasible());
        assert!((r.certificate[0] - 0.5).abs() < 1e-9 && (r.certificate[1] - 0.5).abs() < 1e-9);
        let s = item_audit(
            &mid,
            1,
            0,
            &ItemAuditOptions {
                exact: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((s.exact_top1_fraction.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_implies_exact_top1() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tol = Tolerances::default();
        for _ in 0..10 {
            let model = random_model(&mut rng, 25, 3, true);
            for i in 0..25 {
                if aligned_delta(&model, i, &[], 1).unwrap() > 0.0 {
                    assert!(exact_top1_available(&model, i, &[], &tol).unwrap().is_feasible());
                }
            }
        }
    }

    #[test]
    fn sufficiency_at_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let model = random_model(&mut rng, 30, 4, true);
            let n = rng.gen_range(1..5);
            for i in 0..30 {
                if aligned_delta(&model, i, &[], n).unwrap() > 0.0 {
                    let top = top_n(&model, model.item_factor(i), 1.3, &[], n);
                    assert!(top.contains(&i));
                }
            }
        }
    }

    #[test]
    fn availability_grows_with_history_allowance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = random_model(&mut rng, 60, 3, false);
        let opts = ItemAuditOptions::default();
        let mut last = 0.0;
        for n_h in 0..6 {
            let f = item_audit(&model, 2, n_h, &opts).unwrap().availability_lower_bound;
            assert!(f >= last);
            last = f;
        }
    }

    #[test]
    fn scaling_preserves_aligned_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = random_model(&mut rng, 30, 3, false);
        let scaled = FactorModel::unbiased(model.q().scale(2.5), 0.0).unwrap();
        for i in 0..30 {
            let a = aligned_delta(&model, i, &[], 2).unwrap();
            let b = aligned_delta(&scaled, i, &[], 2).unwrap();
            assert!((b - 2.5 * 2.5 * a).abs() < 1e-9);
            assert_eq!(a > 0.0, b > 0.0);
        }
    }

    #[test]
    fn sampling_examples() {
        let model = FactorModel::unbiased(DenseMatrix::identity(4), 0.0).unwrap();
        let probes: Vec<Vec<f64>> = (0..4).map(|i| model.item_factor(i).to_vec()).collect();
        assert_eq!(sampled_availability(&model, &probes, &[], 1).unwrap(), 1.0);
        let single = vec![vec![1.0, 0.5, 0.2, 0.1]];
        let hits = sampled_available_items(&model, &single, &[], 2).unwrap();
        assert!(hits.iter().filter(|&&h| h).count() <= 2);
        assert!(sampled_availability(&model, &[], &[], 1).is_err());
    }

    #[test]
    fn sampling_at_item_factors_covers_aligned_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let model = random_model(&mut rng, 30, 3, true);
            let probes: Vec<Vec<f64>> = (0..30).map(|i| model.item_factor(i).to_vec()).collect();
            let hits = sampled_available_items(&model, &probes, &[], 2).unwrap();
            for (i, &hit) in hits.iter().enumerate() {
                if aligned_delta(&model, i, &[], 2).unwrap() > 0.0 {
                    assert!(hit);
                }
            }
        }
    }

    #[test]
    fn sampling_union_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = random_model(&mut rng, 30, 2, true);
        let p1: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let p2: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let both: Vec<Vec<f64>> = p1.iter().chain(&p2).cloned().collect();
        let f1 = sampled_availability(&model, &p1, &[], 1).unwrap();
        let f2 = sampled_availability(&model, &p2, &[], 1).unwrap();
        assert!(sampled_availability(&model, &both, &[], 1).unwrap() >= f1.max(f2));
    }

    #[test]
    fn sampling_never_exceeds_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let tol = Tolerances::default();
        let model = random_model(&mut rng, 20, 2, true);
        let probes: Vec<Vec<f64>> = (0..200)
            .map(|k| {
                let t = k as f64 * core::f64::consts::TAU / 200.0;
                vec![10.0 * libm::cos(t), 10.0 * libm::sin(t)]
            })
            .collect();
        let hits = sampled_available_items(&model, &probes, &[], 1).unwrap();
        for (i, _) in hits.iter().enumerate().filter(|(_, &h)| h) {
            assert!(exact_top1_available(&model, i, &[], &tol).unwrap().is_feasible());
        }
    }

    #[test]
    fn gram_report_matches_delta() {
        let model = FactorModel::unbiased(DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(gram_constraint_report(&model, 1).unwrap(), vec![1.0; 3]);
        let dup = model_from(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(gram_constraint_report(&dup, 1).unwrap(), vec![0.0; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = random_model(&mut rng, 35, 4, false);
        let slack = gram_constraint_report(&model, 3).unwrap();
        for (i, s) in slack.iter().enumerate() {
            assert!((s - aligned_delta(&model, i, &[], 3).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn popularity_examples() {
        let stats = popularity_stats(&[3, 1, 2], &[4.0, 2.0, 3.0], &[true, true, true]).unwrap();
        assert_eq!(stats.by_count[0].points, stats.by_count[2].points);
        assert!(stats.by_count[1].points.is_empty());
        let single = popularity_stats(&[7], &[3.5], &[false]).unwrap();
        assert_eq!(single.by_count[1].points, vec![(7.0, 1.0)]);
        assert_eq!(single.by_mean[2].points, vec![(3.5, 1.0)]);
    }

    #[test]
    fn popularity_cdfs_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let counts: Vec<usize> = (0..100).map(|i| 200 / (i + 1) + rng.gen_range(0..3)).collect();
        let means: Vec<f64> = (0..100)
            .map(|i| {
                if counts[i] == 0 {
                    f64::NAN
                } else {
                    rng.gen_range(1.0..5.0)
                }
            })
            .collect();
        let flags: Vec<bool> = (0..100).map(|i| i < 40).collect();
        let stats = popularity_stats(&counts, &means, &flags).unwrap();
        for cdf in stats.by_count.iter().chain(&stats.by_mean) {
            assert!(cdf.is_monotone());
            assert_eq!(cdf.points.last().unwrap().1, 1.0);
        }
    }
}
