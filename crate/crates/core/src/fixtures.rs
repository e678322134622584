//! Synthetic ratings and a small alternating least-squares trainer.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Rating, RatingsTable};
use crate::error::{Error, Result};
use crate::fmath;
use crate::model::{BiasSign, FactorModel};
use crate::numerics::{dot, ridge_solve, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    /// Average fraction of users rating an item, in `(0, 1]`.
    pub density: f64,
    /// Standard deviation of the Gaussian rating noise.
    pub noise: f64,
    /// Item `i` is rated in proportion to `(i + 1)^-skew`.
    pub skew: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 300,
            items: 150,
            dim: 4,
            density: 0.1,
            noise: 0.5,
            skew: 0.8,
            seed: 0,
        }
    }
}

/// Planted factors behind a synthetic table.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; 1 - u keeps the logarithm finite.
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    fmath::sqrt(-2.0 * fmath::ln(1.0 - u)) * fmath::cos(core::f64::consts::TAU * v)
}

/// Number of users rating each item: `round(n * min(1, density * m * w_i / sum w))`
/// with `w_i = (i + 1)^-skew`, and at least one.
pub fn item_observation_counts(spec: &SynthSpec) -> Vec<usize> {
    let weights: Vec<f64> = (0..spec.items)
        .map(|i| fmath::powf((i + 1) as f64, -spec.skew))
        .collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| {
            let share = (spec.density * spec.items as f64 * w / total).min(1.0);
            (fmath::round(spec.users as f64 * share) as usize).clamp(1, spec.users)
        })
        .collect()
}

/// Ratings `clip(p*^T q* + noise, 0, 5)` from factors drawn uniformly on
/// `[0, sqrt(5 / dim)]`, so noiseless ratings already lie in `[0, 5]`.
pub fn generate(spec: &SynthSpec) -> Result<(RatingsTable, SynthTruth)> {
    if spec.users == 0 || spec.items == 0 || spec.dim == 0 {
        return Err(Error::invalid("synthetic spec needs users, items and dim >= 1"));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) || !(spec.noise >= 0.0) || !spec.skew.is_finite() {
        return Err(Error::invalid("density must be in (0, 1], noise >= 0, skew finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hi = fmath::sqrt(5.0 / spec.dim as f64);
    let p = DenseMatrix::from_fn(spec.users, spec.dim, |_, _| rng.gen_range(0.0..=hi));
    let q = DenseMatrix::from_fn(spec.items, spec.dim, |_, _| rng.gen_range(0.0..=hi));
    let mut ratings = Vec::new();
    for (i, &count) in item_observation_counts(spec).iter().enumerate() {
        let mut users = sample(&mut rng, spec.users, count).into_vec();
        users.sort_unstable();
        for u in users {
            let clean = dot(p.row(u), q.row(i));
            let noisy = if spec.noise > 0.0 {
                clean + spec.noise * standard_normal(&mut rng)
            } else {
                clean
            };
            ratings.push(Rating {
                user: u,
                item: i,
                value: noisy.clamp(0.0, 5.0),
                timestamp: None,
            });
        }
    }
    ratings.sort_by_key(|r| (r.user, r.item));
    let ids = |n: usize| (0..n).map(|k| k.to_string()).collect::<Vec<String>>();
    let table = RatingsTable::from_indexed(ids(spec.users), ids(spec.items), ratings)?;
    Ok((table, SynthTruth { p, q }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub lambda: f64,
    pub sweeps: usize,
    pub seed: u64,
    pub bias_sign: BiasSign,
    pub fit_biases: bool,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 4,
            lambda: 0.1,
            sweeps: 30,
            seed: 0,
            bias_sign: BiasSign::Residual,
            fit_biases: true,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FactorModel,
    /// Objective after initialization and after every sweep.
    pub objective: Vec<f64>,
}

struct Biases {
    mu: f64,
    b: Vec<f64>,
    c: Vec<f64>,
}

fn fit_biases(table: &RatingsTable, lambda: f64) -> Biases {
    let (n, m) = (table.users(), table.items());
    if table.is_empty() {
        return Biases {
            mu: 0.0,
            b: vec![0.0; m],
            c: vec![0.0; n],
        };
    }
    let mu = table.ratings().iter().map(|r| r.value).sum::<f64>() / table.len() as f64;
    let mut sum_i = vec![0.0; m];
    let mut cnt_i = vec![0.0; m];
    for r in table.ratings() {
        sum_i[r.item] += r.value - mu;
        cnt_i[r.item] += 1.0;
    }
    let shrink = |s: f64, c: f64| if c + lambda > 0.0 { s / (c + lambda) } else { 0.0 };
    let b: Vec<f64> = sum_i.iter().zip(&cnt_i).map(|(&s, &c)| shrink(s, c)).collect();
    let mut sum_u = vec![0.0; n];
    let mut cnt_u = vec![0.0; n];
    for r in table.ratings() {
        sum_u[r.user] += r.value - mu - b[r.item];
        cnt_u[r.user] += 1.0;
    }
    let c = sum_u.iter().zip(&cnt_u).map(|(&s, &k)| shrink(s, k)).collect();
    Biases { mu, b, c }
}

/// Matrix factorization by alternating ridge solves.
///
/// Biases are fitted first (global mean, then regularized item and user
/// offsets). The factors then fit the targets `r +- (mu + b_i + c_u)`, with the
/// sign taken from `cfg.bias_sign`, under the objective
/// `sum (t_ui - p_u^T q_i)^2 + lambda (|P|^2 + |Q|^2)`. Each half-sweep solves its
/// block exactly, so the objective never increases.
pub fn als_train(table: &RatingsTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.dim == 0 || !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::invalid("training needs dim >= 1 and lambda >= 0"));
    }
    let (n, m, d) = (table.users(), table.items(), cfg.dim);
    if m == 0 {
        return Err(Error::invalid("cannot train on a table without items"));
    }
    let biases = if cfg.fit_biases {
        fit_biases(table, cfg.lambda)
    } else {
        Biases {
            mu: 0.0,
            b: vec![0.0; m],
            c: vec![0.0; n],
        }
    };
    let s = cfg.bias_sign.factor();
    let targets: Vec<f64> = table
        .ratings()
        .iter()
        .map(|r| r.value + s * (biases.mu + biases.b[r.item] + biases.c[r.user]))
        .collect();
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (k, r) in table.ratings().iter().enumerate() {
        by_user[r.user].push(k);
        by_item[r.item].push(k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = DenseMatrix::from_fn(m, d, |_, _| 0.1 * standard_normal(&mut rng));
    let mut p = DenseMatrix::zeros(n, d);
    let ratings = table.ratings();
    let objective = |p: &DenseMatrix, q: &DenseMatrix| -> f64 {
        let fit: f64 = ratings
            .iter()
            .zip(&targets)
            .map(|(r, t)| {
                let e = t - dot(p.row(r.user), q.row(r.item));
                e * e
            })
            .sum();
        let fro = p.frobenius_norm();
        let frq = q.frobenius_norm();
        fit + cfg.lambda * (fro * fro + frq * frq)
    };
    let mut trace = vec![objective(&p, &q)];

    for _ in 0..cfg.sweeps {
        solve_side(&mut p, &q, &by_user, |k| ratings[k].item, &targets, cfg.lambda)?;
        solve_side(&mut q, &p, &by_item, |k| ratings[k].user, &targets, cfg.lambda)?;
        let now = objective(&p, &q);
        let before = *trace.last().expect("trace starts non-empty");
        trace.push(now);
        if before - now <= cfg.tol * before.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let model = FactorModel::new(q, biases.b, biases.mu, cfg.lambda, cfg.bias_sign)?.with_users(p, biases.c)?;
    Ok(TrainOutcome {
        model,
        objective: trace,
    })
}

fn solve_side(
    out: &mut DenseMatrix,
    fixed: &DenseMatrix,
    groups: &[Vec<usize>],
    partner: impl Fn(usize) -> usize,
    targets: &[f64],
    lambda: f64,
) -> Result<()> {
    for (row, group) in groups.iter().enumerate() {
        let rows: Vec<usize> = group.iter().map(|&k| partner(k)).collect();
        let t: Vec<f64> = group.iter().map(|&k| targets[k]).collect();
        let solved = ridge_solve(&fixed.select_rows(&rows), &t, lambda)?;
        out.row_mut(row).copy_from_slice(&solved);
    }
    Ok(())
}

/// Root mean squared error of `mu + b_i + c_u + p_u^T q_i` over a table whose
/// indices match the model's users and items.
pub fn rmse(model: &FactorModel, table: &RatingsTable) -> Result<f64> {
    let users = model
        .users()
        .ok_or_else(|| Error::invalid("model has no user factors"))?;
    if table.is_empty() {
        return Ok(0.0);
    }
    let mut sq = 0.0;
    for r in table.ratings() {
        if r.user >= users.p.rows() {
            return Err(Error::invalid("rating refers to a user outside the model"));
        }
        let pred = crate::model::predict(model, users.p.row(r.user), users.c[r.user], r.item)?;
        sq += (r.value - pred) * (r.value - pred);
    }
    Ok(fmath::sqrt(sq / table.len() as f64))
}

/// Seeded split of the ratings into train and test tables sharing the same ids.
pub fn split_holdout(table: &RatingsTable, test_fraction: f64, seed: u64) -> Result<(RatingsTable, RatingsTable)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test fraction must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in table.ratings() {
        if rng.gen::<f64>() < test_fraction {
            test.push(*r);
        } else {
            train.push(*r);
        }
    }
    let users = table.user_ids().to_vec();
    let items = table.item_ids().to_vec();
    Ok((
        RatingsTable::from_indexed(users.clone(), items.clone(), train)?,
        RatingsTable::from_indexed(users, items, test)?,
    ))
}
