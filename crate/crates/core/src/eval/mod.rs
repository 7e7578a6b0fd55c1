//! Offline evaluation: samples, match metrics, candidate-selection Hit@1,
//! random baselines, statistics, synthetic fixtures and reports.

pub mod fixture;
pub mod report;
pub mod stats;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dualtrack::hash_bytes;
use crate::error::{Error, Result};
use crate::generator::{self, Generator};
use crate::matcher::{count_matches, fuzzy_match};
use crate::padr::{route, BehaviorHistory, UserContext, UserProfile};
use crate::pool::{Article, NewsPool, PrefixIndex};
use crate::sid::{Sid, SidPrefix, LAYER_SIZES};

pub use stats::{bootstrap_ci, cohens_d, paired_bootstrap_p, Ci};

pub const CANDIDATES_PER_SAMPLE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    CandidateSelection,
    NextItem,
    Diversity,
    Feedback,
    ColdstartPadr,
    PureColdstart,
}

impl Intent {
    pub const ALL: [Intent; 6] = [
        Intent::CandidateSelection,
        Intent::NextItem,
        Intent::Diversity,
        Intent::Feedback,
        Intent::ColdstartPadr,
        Intent::PureColdstart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::CandidateSelection => "candidate_selection",
            Intent::NextItem => "next_item",
            Intent::Diversity => "diversity",
            Intent::Feedback => "feedback",
            Intent::ColdstartPadr => "coldstart_padr",
            Intent::PureColdstart => "pure_coldstart",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Intent::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown intent `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub article_id: String,
    pub sid: Sid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    pub intent: Intent,
    pub user_id: String,
    pub query: String,
    pub target: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    pub history_len: usize,
}

impl EvalSample {
    pub fn validate(&self) -> Result<()> {
        match (&self.candidates, self.intent) {
            (Some(c), Intent::CandidateSelection) => {
                if c.len() != CANDIDATES_PER_SAMPLE || !c.contains(&self.target.article_id) {
                    return Err(Error::InvalidInput(format!(
                        "sample `{}`: candidate selection needs {CANDIDATES_PER_SAMPLE} candidates including the target",
                        self.sample_id
                    )));
                }
            }
            (None, Intent::CandidateSelection) => {
                return Err(Error::InvalidInput(format!("sample `{}`: missing candidates", self.sample_id)));
            }
            (Some(_), _) => {
                return Err(Error::InvalidInput(format!(
                    "sample `{}`: only candidate selection samples carry candidates",
                    self.sample_id
                )));
            }
            (None, _) => {}
        }
        if self.intent == Intent::PureColdstart && self.history_len != 0 {
            return Err(Error::InvalidInput(format!(
                "sample `{}`: pure cold-start sample with history",
                self.sample_id
            )));
        }
        Ok(())
    }
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<EvalSample>> {
    let mut out: Vec<EvalSample> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    crate::jsonl::visit_lines(std::io::BufReader::new(std::fs::File::open(path)?), |_, s: EvalSample| {
        s.validate()?;
        if !seen.insert(s.sample_id.clone()) {
            return Err(Error::DuplicateKey(s.sample_id));
        }
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

/// A sample with its routed, sample-tagged context.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub sample: EvalSample,
    pub ctx: UserContext,
}

/// Route every sample with its user's profile and first `history_len`
/// clicks.
pub fn build_cases(
    samples: &[EvalSample],
    profiles: &[UserProfile],
    histories: &[BehaviorHistory],
    tau: usize,
) -> Result<Vec<EvalCase>> {
    let profiles: HashMap<&str, &UserProfile> = profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let histories: HashMap<&str, &BehaviorHistory> = histories.iter().map(|h| (h.user_id.as_str(), h)).collect();
    samples
        .par_iter()
        .map(|s| {
            let profile = profiles
                .get(s.user_id.as_str())
                .ok_or_else(|| Error::MissingRecord(format!("profile for user `{}`", s.user_id)))?;
            let history = match histories.get(s.user_id.as_str()) {
                Some(h) => {
                    if h.len() < s.history_len {
                        return Err(Error::Consistency(format!(
                            "sample `{}` expects {} clicks, user has {}",
                            s.sample_id,
                            s.history_len,
                            h.len()
                        )));
                    }
                    BehaviorHistory {
                        user_id: s.user_id.clone(),
                        clicks: h.clicks[..s.history_len].to_vec(),
                    }
                }
                None if s.history_len == 0 => BehaviorHistory::empty(&s.user_id),
                None => return Err(Error::MissingRecord(format!("history for user `{}`", s.user_id))),
            };
            Ok(EvalCase {
                sample: s.clone(),
                ctx: route(profile, &history, &s.query, tau).with_sample_id(s.sample_id.clone()),
            })
        })
        .collect()
}

/// Per-sample 0/1 outcomes for the three open-generation metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcomes {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub category: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRates {
    pub l1: f64,
    pub l2: f64,
    pub category: f64,
}

fn rate(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        stats::mean(v)
    }
}

impl MatchOutcomes {
    pub fn rates(&self) -> MatchRates {
        MatchRates {
            l1: rate(&self.l1),
            l2: rate(&self.l2),
            category: rate(&self.category),
        }
    }
}

/// Score one prediction per target. L1 and L2 compare codes; Category
/// compares the editorial category of the prediction's top fuzzy match at
/// `delta` with the target's. A missing prediction misses all three.
pub fn match_outcomes(
    predictions: &[Option<SidPrefix>],
    targets: &[(Sid, String)],
    index: &PrefixIndex,
    delta: u32,
) -> Result<MatchOutcomes> {
    if predictions.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let rows: Vec<[f64; 3]> = predictions
        .par_iter()
        .zip(targets)
        .map(|(pred, (sid, category))| {
            let Some(p) = pred else { return [0.0; 3] };
            let l1 = p.s1 == sid.s1;
            let l2 = l1 && p.s2 == sid.s2;
            let cat = fuzzy_match(p, index, delta, 1)
                .first()
                .and_then(|m| index.pool().get(&m.article_id))
                .is_some_and(|a| &a.category == category);
            [l1 as u8 as f64, l2 as u8 as f64, cat as u8 as f64]
        })
        .collect();
    Ok(MatchOutcomes {
        l1: rows.iter().map(|r| r[0]).collect(),
        l2: rows.iter().map(|r| r[1]).collect(),
        category: rows.iter().map(|r| r[2]).collect(),
    })
}

pub fn match_rates(
    predictions: &[Option<SidPrefix>],
    targets: &[(Sid, String)],
    index: &PrefixIndex,
    delta: u32,
) -> Result<MatchRates> {
    Ok(match_outcomes(predictions, targets, index, delta)?.rates())
}

/// Fraction of raw generated prefixes with no article at exactly that
/// `(s1, s2, s3)`.
pub fn hallucination_rate(raw: &[SidPrefix], index: &PrefixIndex) -> f64 {
    empty_match_rate(raw, index, 0)
}

/// Fraction of prefixes whose fuzzy match at `delta` is empty.
pub fn empty_match_rate(raw: &[SidPrefix], index: &PrefixIndex, delta: u32) -> f64 {
    if raw.is_empty() {
        return 0.0;
    }
    raw.iter().filter(|p| count_matches(p, index, delta) == 0).count() as f64 / raw.len() as f64
}

/// Expected L1 agreement of a random predictor that follows the target L1
/// distribution, and the actual rate measured against it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub expected: f64,
    pub actual: f64,
    pub adjusted: f64,
    pub lift: f64,
}

/// `sum_i p_i^2` over the empirical L1-code distribution of `targets`.
pub fn expected_random_l1(targets: &[Sid], actual: f64) -> Result<RandomBaseline> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("no targets".into()));
    }
    let mut counts = [0usize; LAYER_SIZES[0]];
    for t in targets {
        counts[t.s1 as usize] += 1;
    }
    let n = targets.len() as f64;
    let expected: f64 = counts.iter().map(|&c| (c as f64 / n).powi(2)).sum();
    Ok(RandomBaseline {
        expected,
        actual,
        adjusted: actual - expected,
        lift: actual / expected,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialMatch {
    /// Predictions with the right L1 code but the wrong L2 code, over all
    /// predictions.
    pub l1_only_rate: f64,
    pub l1_only: usize,
    pub mean_candidates: f64,
    pub median_candidates: f64,
    /// Fraction of their matched articles in the target's category.
    pub category_overlap: f64,
}

pub fn partial_match_analysis(
    predictions: &[Option<SidPrefix>],
    targets: &[(Sid, String)],
    index: &PrefixIndex,
    delta: u32,
) -> Result<PartialMatch> {
    if predictions.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut counts = Vec::new();
    let (mut same, mut total) = (0usize, 0usize);
    for (pred, (sid, category)) in predictions.iter().zip(targets) {
        let Some(p) = pred else { continue };
        if p.s1 != sid.s1 || p.s2 == sid.s2 {
            continue;
        }
        let matches = fuzzy_match(p, index, delta, usize::MAX);
        counts.push(matches.len() as f64);
        total += matches.len();
        same += matches
            .iter()
            .filter(|m| index.pool().get(&m.article_id).is_some_and(|a| &a.category == category))
            .count();
    }
    if counts.is_empty() {
        return Ok(PartialMatch::default());
    }
    let mut sorted = counts.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok(PartialMatch {
        l1_only_rate: counts.len() as f64 / predictions.len() as f64,
        l1_only: counts.len(),
        mean_candidates: stats::mean(&counts),
        median_candidates: median,
        category_overlap: if total == 0 { 0.0 } else { same as f64 / total as f64 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Four uniform non-target articles.
    Rand,
    /// Two same-category non-targets plus two uniform.
    Align,
    /// The sample's own candidate list.
    Fixed,
}

impl FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(NegativeMode::Rand),
            "align" => Ok(NegativeMode::Align),
            "fixed" => Ok(NegativeMode::Fixed),
            _ => Err(Error::InvalidInput(format!("unknown negative mode `{s}`"))),
        }
    }
}

/// Draws candidate sets from a pool.
#[derive(Debug)]
pub struct NegativeSampler<'a> {
    pool: &'a NewsPool,
    by_category: HashMap<&'a str, Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<String>,
    pub target_pos: usize,
    /// Align had too few same-category articles and used Rand.
    pub align_fallback: bool,
}

fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hash_bytes(sample_id.as_bytes()));
    rng
}

impl<'a> NegativeSampler<'a> {
    pub fn new(pool: &'a NewsPool) -> Self {
        let mut by_category: HashMap<&str, Vec<u32>> = HashMap::new();
        for (i, a) in pool.articles().iter().enumerate() {
            by_category.entry(a.category.as_str()).or_default().push(i as u32);
        }
        NegativeSampler { pool, by_category }
    }

    /// Candidate set for `sample`, fixed per `(sample_id, seed)`.
    pub fn candidates(&self, sample: &EvalSample, mode: NegativeMode, seed: u64) -> Result<CandidateSet> {
        let target_idx = self.pool.position(&sample.target.article_id).ok_or_else(|| {
            Error::Sampling(format!(
                "sample `{}`: target `{}` is not in the pool",
                sample.sample_id, sample.target.article_id
            ))
        })? as u32;
        if mode == NegativeMode::Fixed {
            let candidates = sample
                .candidates
                .clone()
                .ok_or_else(|| Error::Sampling(format!("sample `{}` has no candidates", sample.sample_id)))?;
            if let Some(missing) = candidates.iter().find(|c| !self.pool.contains(c)) {
                return Err(Error::Sampling(format!(
                    "sample `{}`: candidate `{missing}` is not in the pool",
                    sample.sample_id
                )));
            }
            let target_pos = candidates
                .iter()
                .position(|c| c == &sample.target.article_id)
                .ok_or_else(|| Error::Sampling(format!("sample `{}`: target not among candidates", sample.sample_id)))?;
            return Ok(CandidateSet {
                candidates,
                target_pos,
                align_fallback: false,
            });
        }
        let n = self.pool.len() as u64;
        if n < CANDIDATES_PER_SAMPLE as u64 {
            return Err(Error::Sampling(format!(
                "pool has {n} articles, {CANDIDATES_PER_SAMPLE} needed"
            )));
        }
        let mut rng = sample_rng(seed, &sample.sample_id);
        let mut picked = vec![target_idx];
        let mut align_fallback = false;
        if mode == NegativeMode::Align {
            let category = &self.pool.article(target_idx as usize).category;
            let same = self.by_category.get(category.as_str()).map_or(&[][..], Vec::as_slice);
            if same.len() < 3 {
                align_fallback = true;
            } else {
                while picked.len() < 3 {
                    let i = same[rng.gen_range(0..same.len() as u64) as usize];
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
            }
        }
        while picked.len() < CANDIDATES_PER_SAMPLE {
            let i = rng.gen_range(0..n) as u32;
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked.shuffle(&mut rng);
        Ok(CandidateSet {
            target_pos: picked.iter().position(|&i| i == target_idx).unwrap_or(0),
            candidates: picked
                .into_iter()
                .map(|i| self.pool.article(i as usize).id.clone())
                .collect(),
            align_fallback,
        })
    }
}

/// Picks one of a sample's candidates.
pub trait Chooser: Sync {
    fn choose(&self, case: &EvalCase, candidates: &[&Article]) -> Result<usize>;
}

/// Always picks the target.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleChooser;

impl Chooser for OracleChooser {
    fn choose(&self, case: &EvalCase, candidates: &[&Article]) -> Result<usize> {
        candidates
            .iter()
            .position(|a| a.id == case.sample.target.article_id)
            .ok_or_else(|| Error::Consistency(format!("sample `{}`: target not offered", case.sample.sample_id)))
    }
}

/// Uniform pick, fixed per `(sample_id, seed)`.
#[derive(Clone, Copy, Debug)]
pub struct UniformChooser {
    pub seed: u64,
}

impl Chooser for UniformChooser {
    fn choose(&self, case: &EvalCase, candidates: &[&Article]) -> Result<usize> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput("no candidates".into()));
        }
        let mut rng = sample_rng(self.seed ^ 0x5bd1_e995, &case.sample.sample_id);
        Ok(rng.gen_range(0..candidates.len() as u64) as usize)
    }
}

/// Picks the candidate that best agrees with the generator's prefixes:
/// deepest layer agreement (s1, then s2, then s3 within `delta`), then the
/// earlier prefix, then the smaller s3 distance, then the earlier candidate.
pub struct GeneratorChooser<'a> {
    pub generator: &'a dyn Generator,
    pub delta: u32,
}

impl Chooser for GeneratorChooser<'_> {
    fn choose(&self, case: &EvalCase, candidates: &[&Article]) -> Result<usize> {
        let out = generator::run(self.generator, &case.ctx, generator::DEFAULT_PREFIXES)?;
        let key = |a: &Article| {
            out.prefixes
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let d = p.s3.abs_diff(a.sid.s3) as u32;
                    let depth = match (p.s1 == a.sid.s1, p.s2 == a.sid.s2, d <= self.delta) {
                        (true, true, true) => 3u8,
                        (true, true, false) => 2,
                        (true, false, _) => 1,
                        _ => 0,
                    };
                    (depth, std::cmp::Reverse(j), std::cmp::Reverse(d))
                })
                .max()
        };
        let mut best = 0;
        let mut best_key = None;
        for (i, a) in candidates.iter().enumerate() {
            let k = key(a);
            if k > best_key {
                best = i;
                best_key = k;
            }
        }
        Ok(best)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub rate: f64,
    pub outcomes: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
    pub align_fallbacks: usize,
}

/// Hit@1 over the candidate-selection cases. Cases whose candidate set
/// cannot be drawn are skipped and counted.
pub fn hit_at_1(
    cases: &[EvalCase],
    pool: &NewsPool,
    chooser: &dyn Chooser,
    mode: NegativeMode,
    seed: u64,
) -> Result<HitReport> {
    let sampler = NegativeSampler::new(pool);
    let rows: Vec<Option<(f64, bool)>> = cases
        .par_iter()
        .filter(|c| c.sample.intent == Intent::CandidateSelection)
        .map(|case| {
            let set = match sampler.candidates(&case.sample, mode, seed) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("hit@1: {e}");
                    return Ok(None);
                }
            };
            let arts: Vec<&Article> = set
                .candidates
                .iter()
                .map(|id| pool.get(id).expect("sampled from pool"))
                .collect();
            let pick = chooser.choose(case, &arts)?;
            Ok(Some(((pick == set.target_pos) as u8 as f64, set.align_fallback)))
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<f64> = rows.iter().flatten().map(|r| r.0).collect();
    Ok(HitReport {
        rate: rate(&outcomes),
        evaluated: outcomes.len(),
        skipped: rows.iter().filter(|r| r.is_none()).count(),
        align_fallbacks: rows.iter().flatten().filter(|r| r.1).count(),
        outcomes,
    })
}

/// Top prediction and every raw prefix for each case.
pub fn predict(cases: &[EvalCase], generator: &dyn Generator) -> Result<Vec<Vec<SidPrefix>>> {
    cases
        .par_iter()
        .map(|c| generator::run(generator, &c.ctx, generator::DEFAULT_PREFIXES).map(|o| o.prefixes))
        .collect()
}

#[cfg(test)]
mod tests;
