//! SID-prefix fuzzy matching.
//!
//! A pool article with SID `(s1', s2', s3', s4')` matches prefix
//! `(s1, s2, s3)` at tolerance `delta` iff `s1' = s1`, `s2' = s2` and
//! `|s3' - s3| <= delta`; it scores `1 - |s3' - s3| / (delta + 1)`.
//! Results are ordered by score descending, then `published_at` descending,
//! then id ascending, and truncated to `k`.
//!
//! Only the `(s1, s2)` bucket is touched: two binary searches bound the
//! `[s3 - delta, s3 + delta]` window, so cost is independent of the rest of
//! the pool.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{IndexEntry, PrefixIndex};
use crate::sid::{SidPrefix, LAYER_SIZES};

pub const DEFAULT_DELTA: u32 = 5;
pub const DEFAULT_K: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub article_id: String,
    pub score: f64,
    pub s3_distance: u32,
}

/// `1 - d/(delta+1)`, evaluated as one division so the edge score is
/// exactly `1/(delta+1)`.
pub fn match_score(s3_distance: u32, delta: u32) -> f64 {
    (delta as f64 + 1.0 - s3_distance as f64) / (delta as f64 + 1.0)
}

/// Per-layer tolerances for [`hierarchical_match`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tolerance {
    pub s1: u32,
    pub s2: u32,
    pub s3: u32,
}

impl Tolerance {
    pub fn strict(delta: u32) -> Self {
        Tolerance {
            s1: 0,
            s2: 0,
            s3: delta,
        }
    }
}

fn code_range(center: u16, tol: u32, size: usize) -> (u16, u16) {
    let lo = (center as i64 - tol as i64).max(0) as u16;
    let hi = (center as i64 + tol as i64).min(size as i64 - 1) as u16;
    (lo, hi)
}

fn collect<'a>(prefix: &SidPrefix, index: &'a PrefixIndex, tol: Tolerance) -> Vec<(u32, &'a IndexEntry)> {
    let (lo1, hi1) = code_range(prefix.s1, tol.s1, LAYER_SIZES[0]);
    let (lo2, hi2) = code_range(prefix.s2, tol.s2, LAYER_SIZES[1]);
    let (lo3, hi3) = code_range(prefix.s3, tol.s3, LAYER_SIZES[2]);
    let mut out = Vec::new();
    for s1 in lo1..=hi1 {
        for s2 in lo2..=hi2 {
            for e in index.window(s1, s2, lo3, hi3) {
                out.push((prefix.s3.abs_diff(e.s3) as u32, e));
            }
        }
    }
    out
}

fn finish(index: &PrefixIndex, mut hits: Vec<(u32, &IndexEntry)>, delta: u32, k: usize) -> Vec<MatchResult> {
    let key = |&(d, e): &(u32, &IndexEntry)| {
        let a = index.article(e);
        (d, Reverse(a.published_at), a.id.as_str())
    };
    if hits.len() > k {
        hits.select_nth_unstable_by(k, |x, y| key(x).cmp(&key(y)));
        hits.truncate(k);
    }
    hits.sort_unstable_by(|x, y| key(x).cmp(&key(y)));
    hits.into_iter()
        .map(|(d, e)| MatchResult {
            article_id: index.article(e).id.clone(),
            score: match_score(d, delta),
            s3_distance: d,
        })
        .collect()
}

/// Strict L1/L2, tolerant L3 matching.
pub fn fuzzy_match(prefix: &SidPrefix, index: &PrefixIndex, delta: u32, k: usize) -> Vec<MatchResult> {
    hierarchical_match(prefix, index, Tolerance::strict(delta), k)
}

/// Matching with tolerance on every layer. The score still depends on the
/// s3 distance only; `Tolerance::strict(d)` is exactly [`fuzzy_match`].
pub fn hierarchical_match(prefix: &SidPrefix, index: &PrefixIndex, tol: Tolerance, k: usize) -> Vec<MatchResult> {
    if k == 0 {
        return Vec::new();
    }
    finish(index, collect(prefix, index, tol), tol.s3, k)
}

/// Size of the untruncated match set.
pub fn count_matches(prefix: &SidPrefix, index: &PrefixIndex, delta: u32) -> usize {
    let (lo, hi) = code_range(prefix.s3, delta, LAYER_SIZES[2]);
    index.window(prefix.s1, prefix.s2, lo, hi).len()
}

pub fn count_hierarchical(prefix: &SidPrefix, index: &PrefixIndex, tol: Tolerance) -> usize {
    collect(prefix, index, tol).len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub delta: u32,
    pub empty_match_rate: f64,
    /// Mean untruncated candidate count over samples with at least one match.
    pub mean_candidates: f64,
    pub samples: usize,
}

/// Empty-match rate and mean candidate count for each tolerance.
pub fn grid_search_delta(samples: &[SidPrefix], deltas: &[u32], index: &PrefixIndex) -> Result<Vec<GridRow>> {
    if deltas.is_empty() {
        return Err(Error::InvalidInput("delta list is empty".into()));
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_unstable();
    deltas.dedup();
    Ok(deltas
        .into_iter()
        .map(|delta| {
            let counts: Vec<usize> = samples.iter().map(|p| count_matches(p, index, delta)).collect();
            let nonempty: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
            let empty = counts.len() - nonempty.len();
            GridRow {
                delta,
                empty_match_rate: if counts.is_empty() {
                    0.0
                } else {
                    empty as f64 / counts.len() as f64
                },
                mean_candidates: if nonempty.is_empty() {
                    0.0
                } else {
                    nonempty.iter().sum::<usize>() as f64 / nonempty.len() as f64
                },
                samples: counts.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{Article, NewsPool};
    use crate::sid::Sid;
    use std::sync::Arc;

    fn index(specs: &[(&str, [i64; 4], i64)]) -> PrefixIndex {
        let articles = specs
            .iter()
            .map(|(id, sid, t)| Article {
                id: id.to_string(),
                title: String::new(),
                category: "c".into(),
                tags: vec![],
                published_at: *t,
                sid: Sid::from_codes(sid).unwrap(),
            })
            .collect();
        PrefixIndex::build(Arc::new(NewsPool::from_articles(articles).unwrap()))
    }

    #[test]
    fn exact_only_at_zero_delta() {
        let idx = index(&[("a", [1, 2, 10, 0], 5), ("b", [1, 2, 11, 0], 5), ("c", [1, 3, 10, 0], 5)]);
        let p = SidPrefix::new(1, 2, 10).unwrap();
        let out = fuzzy_match(&p, &idx, 0, 10);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].article_id, "a");
        assert_eq!(out[0].score, 1.0);
    }

    #[test]
    fn edge_distance_score() {
        let idx = index(&[("a", [1, 2, 15, 0], 5)]);
        let out = fuzzy_match(&SidPrefix::new(1, 2, 10).unwrap(), &idx, 5, 10);
        assert_eq!(out[0].s3_distance, 5);
        assert!((out[0].score - 1.0 / 6.0).abs() < 1e-15);
        assert!(fuzzy_match(&SidPrefix::new(1, 2, 9).unwrap(), &idx, 5, 10).is_empty());
    }

    #[test]
    fn tie_break_recency_then_id() {
        let idx = index(&[
            ("b", [0, 0, 5, 0], 100),
            ("a", [0, 0, 5, 1], 100),
            ("c", [0, 0, 5, 2], 200),
            ("d", [0, 0, 4, 3], 999),
        ]);
        let out = fuzzy_match(&SidPrefix::new(0, 0, 5).unwrap(), &idx, 2, 10);
        let ids: Vec<&str> = out.iter().map(|m| m.article_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b", "d"]);
        let top2 = fuzzy_match(&SidPrefix::new(0, 0, 5).unwrap(), &idx, 2, 2);
        assert_eq!(top2.len(), 2);
        assert_eq!(top2[1].article_id, "a");
    }

    #[test]
    fn code_space_edges_do_not_wrap() {
        let idx = index(&[("lo", [0, 0, 0, 0], 1), ("hi", [0, 0, 127, 0], 1)]);
        let out = fuzzy_match(&SidPrefix::new(0, 0, 2).unwrap(), &idx, 5, 10);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].article_id, "lo");
    }

    #[test]
    fn hierarchical_relaxes() {
        let idx = index(&[("a", [4, 4, 50, 0], 1), ("b", [5, 6, 52, 0], 1), ("c", [4, 5, 53, 0], 1)]);
        let p = SidPrefix::new(4, 4, 50).unwrap();
        assert_eq!(hierarchical_match(&p, &idx, Tolerance::strict(5), 10), fuzzy_match(&p, &idx, 5, 10));
        let wide = hierarchical_match(&p, &idx, Tolerance { s1: 1, s2: 2, s3: 5 }, 10);
        assert_eq!(wide.len(), 3);
        assert_eq!(count_hierarchical(&p, &idx, Tolerance { s1: 1, s2: 2, s3: 5 }), 3);
    }

    #[test]
    fn grid_rows() {
        let idx = index(&[("a", [1, 1, 10, 0], 1), ("b", [1, 1, 14, 0], 1)]);
        let samples = vec![SidPrefix::new(1, 1, 10).unwrap(), SidPrefix::new(2, 2, 2).unwrap()];
        let rows = grid_search_delta(&samples, &[5, 1], &idx).unwrap();
        assert_eq!(rows[0].delta, 1);
        assert_eq!(rows[0].empty_match_rate, 0.5);
        assert_eq!(rows[0].mean_candidates, 1.0);
        assert_eq!(rows[1].mean_candidates, 2.0);
        assert!(grid_search_delta(&samples, &[], &idx).is_err());
    }
}
