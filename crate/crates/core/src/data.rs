//! In-memory ratings with dense re-indexing of external ids.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmath;
use crate::model::RatingHistory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// Ratings keyed by dense user and item indices.
///
/// Indices are assigned in order of first occurrence, and the original string
/// ids are kept so that every index maps back to its external id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatingsTable {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_lookup: BTreeMap<String, usize>,
    item_lookup: BTreeMap<String, usize>,
    ratings: Vec<Rating>,
}

fn intern(ids: &mut Vec<String>, lookup: &mut BTreeMap<String, usize>, id: &str) -> usize {
    if let Some(&k) = lookup.get(id) {
        return k;
    }
    let k = ids.len();
    ids.push(String::from(id));
    lookup.insert(String::from(id), k);
    k
}

fn build_lookup(ids: &[String]) -> Result<BTreeMap<String, usize>> {
    let mut lookup = BTreeMap::new();
    for (k, id) in ids.iter().enumerate() {
        if lookup.insert(id.clone(), k).is_some() {
            return Err(Error::invalid(format!("duplicate id {id:?}")));
        }
    }
    Ok(lookup)
}

/// Orders external ids numerically when both parse as integers, else as text.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i128>(), b.parse::<i128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

impl RatingsTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Table over fixed id lists; ratings refer to positions in those lists.
    pub fn from_indexed(user_ids: Vec<String>, item_ids: Vec<String>, ratings: Vec<Rating>) -> Result<Self> {
        let user_lookup = build_lookup(&user_ids)?;
        let item_lookup = build_lookup(&item_ids)?;
        for r in &ratings {
            if r.user >= user_ids.len() || r.item >= item_ids.len() {
                return Err(Error::invalid("rating refers to an unknown index"));
            }
            if !r.value.is_finite() {
                return Err(Error::invalid("rating value is not finite"));
            }
        }
        Ok(RatingsTable {
            user_ids,
            item_ids,
            user_lookup,
            item_lookup,
            ratings,
        })
    }

    pub fn push(&mut self, user: &str, item: &str, value: f64, timestamp: Option<i64>) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid("rating value is not finite"));
        }
        let user = intern(&mut self.user_ids, &mut self.user_lookup, user);
        let item = intern(&mut self.item_ids, &mut self.item_lookup, item);
        self.ratings.push(Rating {
            user,
            item,
            value,
            timestamp,
        });
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    /// Fails on the first rating outside `[lo, hi]`.
    pub fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        match self.ratings.iter().position(|r| !(lo..=hi).contains(&r.value)) {
            None => Ok(()),
            Some(k) => Err(Error::invalid(format!(
                "rating {} (row {}) outside [{lo}, {hi}]",
                self.ratings[k].value,
                k + 1
            ))),
        }
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.items()];
        for r in &self.ratings {
            counts[r.item] += 1;
        }
        counts
    }

    /// Mean rating per item; `NaN` for items without ratings.
    pub fn item_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.items()];
        for r in &self.ratings {
            sums[r.item] += r.value;
        }
        sums.iter()
            .zip(self.item_counts())
            .map(|(s, c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    /// Per-user `(items, ratings)` in table order. A repeated (user, item) pair
    /// keeps its last value.
    pub fn user_ratings(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        let mut out: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); self.users()];
        let mut slot: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); self.users()];
        for r in &self.ratings {
            let (items, values) = &mut out[r.user];
            match slot[r.user].get(&r.item) {
                Some(&k) => values[k] = r.value,
                None => {
                    slot[r.user].insert(r.item, items.len());
                    items.push(r.item);
                    values.push(r.value);
                }
            }
        }
        out
    }

    /// Rating history of user `u` with user bias `c_u`.
    pub fn history(&self, u: usize, c_u: f64) -> Result<RatingHistory> {
        if u >= self.users() {
            return Err(Error::invalid(format!("user index {u} out of range")));
        }
        let mut items = Vec::new();
        let mut values = Vec::new();
        let mut slot = BTreeMap::new();
        for r in self.ratings.iter().filter(|r| r.user == u) {
            match slot.get(&r.item) {
                Some(&k) => values[k] = r.value,
                None => {
                    slot.insert(r.item, items.len());
                    items.push(r.item);
                    values.push(r.value);
                }
            }
        }
        RatingHistory::new(u, items, values, c_u)
    }

    /// Keeps the `k` most rated items, ties broken by external id. Returns the
    /// filtered table (kept items in their original relative order) and the
    /// original indices of the kept items.
    pub fn top_items(&self, k: usize) -> (RatingsTable, Vec<usize>) {
        let counts = self.item_counts();
        let mut order: Vec<usize> = (0..self.items()).collect();
        order.sort_by(|&a, &b| {
            counts[b]
                .cmp(&counts[a])
                .then_with(|| compare_ids(&self.item_ids[a], &self.item_ids[b]))
        });
        order.truncate(k);
        order.sort_unstable();
        (self.select_items(&order), order)
    }

    /// Table over the listed items only, re-indexed by position in `keep`.
    /// All users are kept.
    pub fn select_items(&self, keep: &[usize]) -> RatingsTable {
        let mut remap = vec![usize::MAX; self.items()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let ratings = self
            .ratings
            .iter()
            .filter(|r| remap[r.item] != usize::MAX)
            .map(|r| Rating {
                item: remap[r.item],
                ..*r
            })
            .collect();
        let item_ids: Vec<String> = keep.iter().map(|&i| self.item_ids[i].clone()).collect();
        RatingsTable {
            user_ids: self.user_ids.clone(),
            user_lookup: self.user_lookup.clone(),
            item_lookup: build_lookup(&item_ids).expect("item ids are unique"),
            item_ids,
            ratings,
        }
    }

    /// Re-indexes items to follow `item_ids` (e.g. the row order of a model).
    /// Ratings of items not listed are dropped; returns the table and the
    /// number of dropped ratings.
    pub fn align_items(&self, item_ids: &[String]) -> Result<(RatingsTable, usize)> {
        let item_lookup = build_lookup(item_ids)?;
        let mut dropped = 0;
        let ratings = self
            .ratings
            .iter()
            .filter_map(|r| match item_lookup.get(&self.item_ids[r.item]) {
                Some(&item) => Some(Rating { item, ..*r }),
                None => {
                    dropped += 1;
                    None
                }
            })
            .collect();
        Ok((
            RatingsTable {
                user_ids: self.user_ids.clone(),
                user_lookup: self.user_lookup.clone(),
                item_ids: item_ids.to_vec(),
                item_lookup,
                ratings,
            },
            dropped,
        ))
    }

    /// Applies `log(1 + x)` to every value; negative values are rejected.
    pub fn log1p_transform(&self) -> Result<RatingsTable> {
        if let Some(r) = self.ratings.iter().find(|r| r.value < 0.0) {
            return Err(Error::invalid(format!(
                "negative count {} cannot be log-transformed",
                r.value
            )));
        }
        let mut out = self.clone();
        for r in &mut out.ratings {
            r.value = fmath::ln_1p(r.value);
        }
        Ok(out)
    }

    /// Sums repeated (user, item) rows into one count each and drops items whose
    /// total across users is below `min_total`. Kept items retain their
    /// relative order; timestamps are discarded.
    pub fn aggregate_listens(&self, min_total: f64) -> RatingsTable {
        let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut first_seen: Vec<(usize, usize)> = Vec::new();
        for r in &self.ratings {
            let key = (r.user, r.item);
            let entry = sums.entry(key).or_insert_with(|| {
                first_seen.push(key);
                0.0
            });
            *entry += r.value;
        }
        let mut totals = vec![0.0; self.items()];
        for (&(_, i), &v) in &sums {
            totals[i] += v;
        }
        let keep: Vec<usize> = (0..self.items()).filter(|&i| totals[i] >= min_total).collect();
        let merged = RatingsTable {
            ratings: first_seen
                .iter()
                .map(|&(user, item)| Rating {
                    user,
                    item,
                    value: sums[&(user, item)],
                    timestamp: None,
                })
                .collect(),
            ..self.clone()
        };
        merged.select_items(&keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &str, f64)]) -> RatingsTable {
        let mut t = RatingsTable::new();
        for &(u, i, v) in rows {
            t.push(u, i, v, None).unwrap();
        }
        t
    }

    #[test]
    fn first_occurrence_ids_round_trip() {
        let t = table(&[("7", "b", 1.0), ("3", "a", 2.0), ("7", "a", 3.0)]);
        assert_eq!(t.user_ids(), &["7", "3"]);
        assert_eq!(t.item_ids(), &["b", "a"]);
        for r in t.ratings() {
            let u = &t.user_ids()[r.user];
            assert_eq!(t.user_index(u), Some(r.user));
        }
    }

    #[test]
    fn range_check() {
        let t = table(&[("1", "1", 7.0)]);
        assert!(t.check_range(0.0, 5.0).is_err());
        assert!(t.check_range(0.0, 10.0).is_ok());
    }

    #[test]
    fn counts_means_histories() {
        let t = table(&[("u", "x", 4.0), ("v", "x", 2.0), ("u", "y", 5.0), ("u", "x", 1.0)]);
        assert_eq!(t.item_counts(), vec![3, 1]);
        assert!((t.item_means()[0] - 7.0 / 3.0).abs() < 1e-15);
        let h = t.history(0, 0.5).unwrap();
        assert_eq!(h.omega(), &[0, 1]);
        assert_eq!(h.ratings(), &[1.0, 5.0]);
        assert_eq!(t.user_ratings()[0].1, vec![1.0, 5.0]);
    }

    #[test]
    fn top_items_tie_break_by_numeric_id() {
        let t = table(&[
            ("1", "10", 1.0),
            ("1", "9", 1.0),
            ("2", "10", 1.0),
            ("2", "9", 1.0),
            ("1", "100", 1.0),
        ]);
        let (top, kept) = t.top_items(1);
        assert_eq!(top.item_ids(), &["9"]);
        assert_eq!(kept, vec![1]);
        assert_eq!(top.len(), 2);
        let (all, _) = t.top_items(10);
        assert_eq!(all.len(), t.len());
    }

    #[test]
    fn log1p_examples() {
        let t = table(&[("1", "1", 0.0), ("1", "2", core::f64::consts::E - 1.0)]);
        let l = t.log1p_transform().unwrap();
        assert_eq!(l.ratings()[0].value, 0.0);
        assert!((l.ratings()[1].value - 1.0).abs() < 1e-15);
        assert!(table(&[("1", "1", -1.0)]).log1p_transform().is_err());
    }

    #[test]
    fn aggregate_drops_rare_items() {
        let t = table(&[("1", "a", 30.0), ("1", "a", 30.0), ("2", "b", 10.0), ("2", "a", 5.0)]);
        let agg = t.aggregate_listens(50.0);
        assert_eq!(agg.item_ids(), &["a"]);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg.ratings()[0].value, 60.0);
    }

    #[test]
    fn align_to_model_order() {
        let t = table(&[("1", "a", 3.0), ("1", "z", 2.0), ("2", "b", 1.0)]);
        let ids: Vec<String> = ["b", "a"].iter().map(|s| String::from(*s)).collect();
        let (aligned, dropped) = t.align_items(&ids).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(aligned.ratings()[0].item, 1);
        assert_eq!(aligned.ratings()[1].item, 0);
    }
}
