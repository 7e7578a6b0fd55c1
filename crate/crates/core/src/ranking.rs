//! Interest-aware ranking of matched candidates.
//!
//! ```text
//! interest   = 3 * [category in profile categories] + |tags ∩ keywords|
//! relevance  = match_score * (1 + interest) / (1 + max interest over candidates)
//! freshness  = exp(-age_hours / 24)
//! final      = (1 - lambda) * relevance + lambda * freshness
//! ```
//!
//! Order: final desc, match_score desc, published_at desc, id asc.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::MatchResult;
use crate::padr::{by_weight, BehaviorHistory, Click, UserProfile, HISTORY_RENDER_LIMIT};
use crate::pool::{Article, NewsPool};

pub const CATEGORY_WEIGHT: u32 = 3;
pub const KEYWORD_WEIGHT: u32 = 1;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const FRESHNESS_HORIZON_HOURS: f64 = 24.0;

/// Category and keyword sets derived from a profile and its recent clicks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterestProfile {
    pub categories: HashSet<String>,
    pub keywords: HashSet<String>,
}

impl InterestProfile {
    pub fn new(profile: &UserProfile, history: &BehaviorHistory) -> Self {
        InterestProfile::from_clicks(profile, &history.clicks)
    }

    /// Same as [`InterestProfile::new`] over a bare click list, oldest first.
    pub fn from_clicks(profile: &UserProfile, clicks: &[Click]) -> Self {
        let recent = &clicks[clicks.len().saturating_sub(HISTORY_RENDER_LIMIT)..];
        let categories = profile
            .declared_interests
            .iter()
            .map(String::as_str)
            .chain(by_weight(&profile.longterm_prefs_30d).into_iter().take(3))
            .chain(by_weight(&profile.longterm_prefs_7d).into_iter().take(3))
            .map(str::to_string)
            .collect();
        let keywords = profile
            .declared_interests
            .iter()
            .chain(recent.iter().flat_map(|c| c.tags.iter()))
            .cloned()
            .collect();
        InterestProfile { categories, keywords }
    }

    pub fn from_profile(profile: &UserProfile) -> Self {
        InterestProfile::new(profile, &BehaviorHistory::empty(&profile.user_id))
    }
}

pub fn interest_points(article: &Article, interests: &InterestProfile) -> u32 {
    let category = if interests.categories.contains(&article.category) {
        CATEGORY_WEIGHT
    } else {
        0
    };
    let tags: HashSet<&String> = article.tags.iter().collect();
    let keyword_hits = tags.into_iter().filter(|t| interests.keywords.contains(*t)).count() as u32;
    category + KEYWORD_WEIGHT * keyword_hits
}

pub fn freshness(published_at: i64, now: i64) -> f64 {
    let age_hours = (now - published_at).max(0) as f64 / 3600.0;
    (-age_hours / FRESHNESS_HORIZON_HOURS).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub article_id: String,
    pub match_score: f64,
    pub interest_points: u32,
    pub freshness: f64,
    pub final_score: f64,
    pub published_at: i64,
}

fn order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then_with(|| b.match_score.total_cmp(&a.match_score))
        .then_with(|| b.published_at.cmp(&a.published_at))
        .then_with(|| a.article_id.cmp(&b.article_id))
}

pub fn rank(
    candidates: &[MatchResult],
    pool: &NewsPool,
    interests: &InterestProfile,
    now: i64,
    lambda: f64,
) -> Result<Vec<RankedCandidate>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    let resolved = candidates
        .iter()
        .map(|c| {
            pool.get(&c.article_id)
                .map(|a| (c, a, interest_points(a, interests)))
                .ok_or_else(|| Error::Consistency(format!("candidate `{}` is not in pool version {}", c.article_id, pool.version())))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_points = resolved.iter().map(|&(_, _, p)| p).max().unwrap_or(0);
    let denom = 1.0 + max_points as f64;

    let mut ranked: Vec<RankedCandidate> = resolved
        .into_iter()
        .map(|(c, a, points)| {
            let relevance = c.score * (1.0 + points as f64) / denom;
            let fresh = freshness(a.published_at, now);
            RankedCandidate {
                article_id: a.id.clone(),
                match_score: c.score,
                interest_points: points,
                freshness: fresh,
                final_score: (1.0 - lambda) * relevance + lambda * fresh,
                published_at: a.published_at,
            }
        })
        .collect();
    ranked.sort_by(order);
    Ok(ranked)
}
