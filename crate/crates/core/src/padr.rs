//! Profile-aware dual-signal routing.
//!
//! Each request is routed by history length against the sufficiency
//! threshold `tau`:
//!
//! | history          | path   | context                          |
//! |------------------|--------|----------------------------------|
//! | `len >= tau`     | warm   | profile, history, query          |
//! | `0 < len < tau`  | hybrid | profile, history, query, `sparse`|
//! | `len == 0`       | cold   | profile, query, `no history`     |
//!
//! The rendered context is the canonical byte string generators consume and
//! the cache hashes: labeled `PROFILE`, `HISTORY`, `QUERY`, `INDICATOR`
//! sections in that order, newline separated, with sections that do not
//! apply to the path left out. History shows the most recent
//! [`HISTORY_RENDER_LIMIT`] clicks in chronological order.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sid::Sid;

pub const DEFAULT_TAU: usize = 10;
pub const HISTORY_RENDER_LIMIT: usize = 20;
pub const SPARSE: &str = "sparse";
pub const NO_HISTORY: &str = "no history";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    pub age_range: String,
    pub gender: String,
    pub location: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub category: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Activity {
    pub active_hours: Vec<u8>,
    pub daily_duration_minutes: f64,
    pub engagement_level: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatAffinity {
    pub video: f64,
    pub text: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub demographics: Demographics,
    #[serde(default)]
    pub declared_interests: Vec<String>,
    #[serde(default)]
    pub longterm_prefs_30d: Vec<CategoryWeight>,
    #[serde(default)]
    pub longterm_prefs_7d: Vec<CategoryWeight>,
    #[serde(default)]
    pub activity: Activity,
    #[serde(default)]
    pub format_affinity: FormatAffinity,
}

pub(crate) fn by_weight(prefs: &[CategoryWeight]) -> Vec<&str> {
    let mut sorted: Vec<&CategoryWeight> = prefs.iter().collect();
    sorted.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    sorted.into_iter().map(|p| p.category.as_str()).collect()
}

impl UserProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, prefs) in [("longterm_prefs_30d", &self.longterm_prefs_30d), ("longterm_prefs_7d", &self.longterm_prefs_7d)] {
            if prefs.len() > 3 {
                return Err(Error::InvalidInput(format!(
                    "user `{}`: {name} has {} entries, at most 3 allowed",
                    self.user_id,
                    prefs.len()
                )));
            }
            if let Some(p) = prefs.iter().find(|p| !(p.weight >= 0.0 && p.weight.is_finite())) {
                return Err(Error::InvalidInput(format!(
                    "user `{}`: {name} weight for `{}` must be a non-negative number",
                    self.user_id, p.category
                )));
            }
        }
        Ok(())
    }

    /// Interest categories, strongest signal first: 30-day preferences by
    /// weight, then 7-day, then declared interests. Duplicates removed.
    pub fn interest_categories(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        by_weight(&self.longterm_prefs_30d)
            .into_iter()
            .chain(by_weight(&self.longterm_prefs_7d))
            .chain(self.declared_interests.iter().map(String::as_str))
            .filter(|c| !c.is_empty() && seen.insert(*c))
            .map(str::to_string)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub article_id: String,
    pub sid: Sid,
    pub timestamp: i64,
    #[serde(default)]
    pub dwell_seconds: f64,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorHistory {
    pub user_id: String,
    #[serde(default)]
    pub clicks: Vec<Click>,
}

impl BehaviorHistory {
    pub fn empty(user_id: &str) -> Self {
        BehaviorHistory {
            user_id: user_id.to_string(),
            clicks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.clicks.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::InvalidInput(format!(
                    "user `{}`: click timestamps decrease at `{}`",
                    self.user_id, pair[1].article_id
                )));
            }
        }
        if let Some(c) = self.clicks.iter().find(|c| !(c.dwell_seconds >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "user `{}`: negative dwell on `{}`",
                self.user_id, c.article_id
            )));
        }
        Ok(())
    }

    /// The most recent `n` clicks, oldest first.
    pub fn recent(&self, n: usize) -> &[Click] {
        &self.clicks[self.clicks.len().saturating_sub(n)..]
    }
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<UserProfile>> {
    let profiles: Vec<UserProfile> = crate::jsonl::read(path)?;
    let mut seen = HashSet::new();
    for p in &profiles {
        p.validate()?;
        if !seen.insert(p.user_id.as_str()) {
            return Err(Error::DuplicateKey(p.user_id.clone()));
        }
    }
    Ok(profiles)
}

pub fn read_histories(path: impl AsRef<Path>) -> Result<Vec<BehaviorHistory>> {
    let histories: Vec<BehaviorHistory> = crate::jsonl::read(path)?;
    for h in &histories {
        h.validate()?;
    }
    Ok(histories)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutePath {
    Warm,
    Hybrid,
    Cold,
}

impl RoutePath {
    pub fn indicator(self) -> Option<&'static str> {
        match self {
            RoutePath::Warm => None,
            RoutePath::Hybrid => Some(SPARSE),
            RoutePath::Cold => Some(NO_HISTORY),
        }
    }

    pub fn for_history(len: usize, tau: usize) -> Self {
        if len == 0 {
            RoutePath::Cold
        } else if len >= tau {
            RoutePath::Warm
        } else {
            RoutePath::Hybrid
        }
    }
}

/// A routed request context. `rendered` is what generators read and what
/// the cache keys on; the structured fields ride along for generators that
/// need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub path: RoutePath,
    pub query: String,
    pub indicator: Option<String>,
    pub rendered: String,
    pub profile: UserProfile,
    #[serde(default)]
    pub history: Vec<Click>,
}

impl UserContext {
    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn join_weights(prefs: &[CategoryWeight]) -> String {
    prefs
        .iter()
        .map(|p| format!("{}:{}", one_line(&p.category), p.weight))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render(profile: &UserProfile, history: &[Click], query: &str, path: RoutePath) -> String {
    let mut out = String::new();
    let d = &profile.demographics;
    let a = &profile.activity;
    let hours = a.active_hours.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
    // Writing to a String cannot fail.
    let _ = writeln!(out, "PROFILE");
    let _ = writeln!(out, "user_id: {}", one_line(&profile.user_id));
    let _ = writeln!(
        out,
        "demographics: age_range={}; gender={}; location={}",
        one_line(&d.age_range),
        one_line(&d.gender),
        one_line(&d.location)
    );
    let _ = writeln!(out, "declared_interests: {}", one_line(&profile.declared_interests.join(", ")));
    let _ = writeln!(out, "longterm_30d: {}", join_weights(&profile.longterm_prefs_30d));
    let _ = writeln!(out, "longterm_7d: {}", join_weights(&profile.longterm_prefs_7d));
    let _ = writeln!(
        out,
        "activity: active_hours={hours}; daily_duration_minutes={}; engagement_level={}",
        a.daily_duration_minutes,
        one_line(&a.engagement_level)
    );
    let _ = writeln!(
        out,
        "format_affinity: video={}; text={}",
        profile.format_affinity.video, profile.format_affinity.text
    );
    if path != RoutePath::Cold {
        let _ = writeln!(out, "HISTORY");
        for c in history {
            let _ = writeln!(out, "{} | {} | {}", one_line(&c.title), one_line(&c.category), c.sid);
        }
    }
    let _ = writeln!(out, "QUERY");
    let _ = writeln!(out, "{}", one_line(query));
    if let Some(ind) = path.indicator() {
        let _ = writeln!(out, "INDICATOR");
        let _ = writeln!(out, "{ind}");
    }
    out
}

/// Route one request and render its context.
pub fn route(profile: &UserProfile, history: &BehaviorHistory, query: &str, tau: usize) -> UserContext {
    let path = RoutePath::for_history(history.len(), tau);
    let recent = history.recent(HISTORY_RENDER_LIMIT);
    UserContext {
        sample_id: None,
        path,
        query: query.to_string(),
        indicator: path.indicator().map(str::to_string),
        rendered: render(profile, recent, query, path),
        profile: profile.clone(),
        history: history.clicks.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub cold: f64,
    pub hybrid: f64,
    pub warm: f64,
}

pub fn path_distribution(users: &[(UserProfile, BehaviorHistory)], tau: usize) -> Result<PathDistribution> {
    let lens: Vec<usize> = users.iter().map(|(_, h)| h.len()).collect();
    path_distribution_from_lengths(&lens, tau)
}

pub fn path_distribution_from_lengths(history_lens: &[usize], tau: usize) -> Result<PathDistribution> {
    if history_lens.is_empty() {
        return Err(Error::InvalidInput("no users".into()));
    }
    let mut counts = [0usize; 3];
    for &len in history_lens {
        counts[RoutePath::for_history(len, tau) as usize] += 1;
    }
    let n = history_lens.len() as f64;
    Ok(PathDistribution {
        warm: counts[RoutePath::Warm as usize] as f64 / n,
        hybrid: counts[RoutePath::Hybrid as usize] as f64 / n,
        cold: counts[RoutePath::Cold as usize] as f64 / n,
    })
}

pub fn preset_query(category: &str) -> String {
    format!("recommend {category} news")
}

/// Cache-warming contexts, one per interest category, built without
/// history (cold path).
pub fn preset_queries(profile: &UserProfile) -> Vec<UserContext> {
    preset_queries_with_history(profile, &BehaviorHistory::empty(&profile.user_id), DEFAULT_TAU)
}

pub fn preset_queries_with_history(profile: &UserProfile, history: &BehaviorHistory, tau: usize) -> Vec<UserContext> {
    profile
        .interest_categories()
        .iter()
        .map(|c| route(profile, history, &preset_query(c), tau))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> UserProfile {
        UserProfile {
            user_id: "u1".into(),
            declared_interests: vec!["technology".into()],
            ..Default::default()
        }
    }

    fn history(n: usize) -> BehaviorHistory {
        BehaviorHistory {
            user_id: "u1".into(),
            clicks: (0..n)
                .map(|i| Click {
                    article_id: format!("a{i}"),
                    sid: Sid::new(1, 2, 3, i as i64).unwrap(),
                    timestamp: i as i64,
                    dwell_seconds: 10.0,
                    title: format!("t{i}"),
                    category: "tech".into(),
                    tags: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn branches_at_boundaries() {
        assert_eq!(route(&profile(), &history(0), "q", 10).path, RoutePath::Cold);
        assert_eq!(route(&profile(), &history(10), "q", 10).path, RoutePath::Warm);
        assert_eq!(route(&profile(), &history(9), "q", 10).path, RoutePath::Hybrid);
    }

    #[test]
    fn rendered_sections() {
        let cold = route(&profile(), &history(0), "recommend tech news", 10);
        assert!(!cold.rendered.contains("HISTORY"));
        assert!(cold.rendered.ends_with("INDICATOR\nno history\n"));
        assert_eq!(cold.indicator.as_deref(), Some(NO_HISTORY));

        let warm = route(&profile(), &history(25), "what else?", 10);
        assert!(!warm.rendered.contains("INDICATOR"));
        assert_eq!(warm.rendered.matches(" | tech | ").count(), HISTORY_RENDER_LIMIT);
        assert!(warm.rendered.contains("t24"));
        assert!(!warm.rendered.contains("t4 |"));
        let again = route(&profile(), &history(25), "what else?", 10);
        assert_eq!(warm.rendered, again.rendered);
    }

    #[test]
    fn distribution_rejects_empty() {
        assert!(path_distribution(&[], 10).is_err());
        let d = path_distribution_from_lengths(&[0, 0], 10).unwrap();
        assert_eq!((d.cold, d.hybrid, d.warm), (1.0, 0.0, 0.0));
    }

    #[test]
    fn presets() {
        let p = profile();
        let presets = preset_queries(&p);
        assert_eq!(presets.len(), 1);
        assert!(presets[0].rendered.contains("technology"));

        let mut p = profile();
        p.declared_interests = vec!["technology".into(), "sports".into()];
        p.longterm_prefs_30d = vec![
            CategoryWeight { category: "sports".into(), weight: 0.4 },
            CategoryWeight { category: "finance".into(), weight: 0.6 },
        ];
        assert_eq!(p.interest_categories(), ["finance", "sports", "technology"]);
        assert_eq!(preset_queries(&p).len(), 3);
        assert!(preset_queries(&UserProfile::default()).is_empty());
    }

    #[test]
    fn validation() {
        let mut p = profile();
        p.longterm_prefs_7d = vec![CategoryWeight { category: "x".into(), weight: -1.0 }];
        assert!(p.validate().is_err());
        let mut h = history(3);
        h.clicks[2].timestamp = -5;
        assert!(h.validate().is_err());
    }
}
