//! Deterministic synthetic data: a hierarchically clustered article corpus
//! with ground-truth SIDs and embeddings, users with configurable history
//! lengths and preference concentration, and evaluation samples for every
//! intent.
//!
//! Generative model:
//!
//! - `s1` is Zipf over the 32 coarse codes; `s2` is Zipf over a per-`s1`
//!   permutation of the 64 mid codes; `s3` scatters around three centers
//!   per `(s1, s2)` bucket; `s4` is uniform.
//! - An article's category is `s1 mod categories`, replaced by a uniform
//!   category with probability `category_noise`.
//! - Embeddings sum a large per-`s1` anchor, a medium per-`(s1, s2)`
//!   anchor, a small per-`s3` anchor and noise.
//! - Each user has one or two home `s1` codes (weights 0.7 / 0.3) and a
//!   favourite `s2` in each. A preference draw picks a home code with
//!   probability `concentration`, and then the favourite bucket half the
//!   time; otherwise it picks uniformly.
//! - Histories draw from the train split, targets from the test split.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{EvalSample, Intent, Target, CANDIDATES_PER_SAMPLE};
use crate::codebook::{Embedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::generator::ReplayRecord;
use crate::padr::{
    preset_query, Activity, BehaviorHistory, CategoryWeight, Click, Demographics, FormatAffinity, UserProfile,
};
use crate::pool::{temporal_split, Article};
use crate::sid::{Sid, SidPrefix, LAYER_SIZES};

pub const CATEGORY_NAMES: [&str; 32] = [
    "technology",
    "sports",
    "finance",
    "entertainment",
    "politics",
    "health",
    "science",
    "world",
    "business",
    "travel",
    "food",
    "automotive",
    "education",
    "culture",
    "gaming",
    "fashion",
    "real_estate",
    "weather",
    "military",
    "history",
    "parenting",
    "pets",
    "music",
    "film",
    "books",
    "law",
    "energy",
    "agriculture",
    "space",
    "lifestyle",
    "society",
    "local",
];

const TAGS_PER_CATEGORY: usize = 8;
const BUCKET_CENTERS: usize = 3;
const S3_SPREAD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentWeights {
    pub candidate_selection: f64,
    pub next_item: f64,
    pub diversity: f64,
    pub feedback: f64,
    pub coldstart_padr: f64,
    pub pure_coldstart: f64,
}

impl Default for IntentWeights {
    fn default() -> Self {
        IntentWeights {
            candidate_selection: 1.0,
            next_item: 1.0,
            diversity: 1.0,
            feedback: 1.0,
            coldstart_padr: 1.0,
            pure_coldstart: 1.0,
        }
    }
}

impl IntentWeights {
    fn get(&self, intent: Intent) -> f64 {
        match intent {
            Intent::CandidateSelection => self.candidate_selection,
            Intent::NextItem => self.next_item,
            Intent::Diversity => self.diversity,
            Intent::Feedback => self.feedback,
            Intent::ColdstartPadr => self.coldstart_padr,
            Intent::PureColdstart => self.pure_coldstart,
        }
    }

    /// Every weight on `intent` alone.
    pub fn only(intent: Intent) -> Self {
        let mut w = IntentWeights {
            candidate_selection: 0.0,
            next_item: 0.0,
            diversity: 0.0,
            feedback: 0.0,
            coldstart_padr: 0.0,
            pure_coldstart: 0.0,
        };
        match intent {
            Intent::CandidateSelection => w.candidate_selection = 1.0,
            Intent::NextItem => w.next_item = 1.0,
            Intent::Diversity => w.diversity = 1.0,
            Intent::Feedback => w.feedback = 1.0,
            Intent::ColdstartPadr => w.coldstart_padr = 1.0,
            Intent::PureColdstart => w.pure_coldstart = 1.0,
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub seed: u64,
    pub articles: usize,
    pub categories: usize,
    pub category_noise: f64,
    pub zipf_exponent: f64,
    pub start_ts: i64,
    pub span_days: u32,
    /// Share of the time span held out as the test pool.
    pub test_fraction: f64,
    /// 0 skips embeddings.
    pub embedding_dim: usize,
    pub users: usize,
    pub pure_coldstart_fraction: f64,
    pub hybrid_fraction: f64,
    pub tau: usize,
    pub max_history: usize,
    pub concentration: f64,
    pub samples: usize,
    pub intent_weights: IntentWeights,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 42,
            articles: 5000,
            categories: 16,
            category_noise: 0.1,
            zipf_exponent: 1.0,
            start_ts: 1_700_000_000,
            span_days: 30,
            test_fraction: 0.2,
            embedding_dim: 32,
            users: 1000,
            pure_coldstart_fraction: 0.1,
            hybrid_fraction: 0.3,
            tau: 10,
            max_history: 40,
            concentration: 0.8,
            samples: 3000,
            intent_weights: IntentWeights::default(),
        }
    }
}

impl FixtureSpec {
    fn n_pure(&self) -> usize {
        (self.users as f64 * self.pure_coldstart_fraction).round() as usize
    }

    fn n_hybrid(&self) -> usize {
        ((self.users as f64 * self.hybrid_fraction).round() as usize).min(self.users - self.n_pure())
    }

    fn n_warm(&self) -> usize {
        self.users - self.n_pure() - self.n_hybrid()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} = {v} outside [0, 1]")))
            }
        };
        if self.articles == 0 {
            return Err(Error::Spec("articles must be positive".into()));
        }
        if !(1..=CATEGORY_NAMES.len()).contains(&self.categories) {
            return Err(Error::Spec(format!(
                "categories = {} outside 1..={}",
                self.categories,
                CATEGORY_NAMES.len()
            )));
        }
        unit("category_noise", self.category_noise)?;
        unit("test_fraction", self.test_fraction)?;
        unit("pure_coldstart_fraction", self.pure_coldstart_fraction)?;
        unit("hybrid_fraction", self.hybrid_fraction)?;
        unit("concentration", self.concentration)?;
        if self.pure_coldstart_fraction + self.hybrid_fraction > 1.0 {
            return Err(Error::Spec("pure cold-start and hybrid fractions exceed 1".into()));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::Spec("zipf_exponent must be non-negative".into()));
        }
        if self.span_days == 0 {
            return Err(Error::Spec("span_days must be positive".into()));
        }
        if self.tau == 0 {
            return Err(Error::Spec("tau must be positive".into()));
        }
        if self.n_hybrid() > 0 && self.tau < 2 {
            return Err(Error::Spec("hybrid users need tau of at least 2".into()));
        }
        if self.n_warm() > 0 && self.max_history < self.tau {
            return Err(Error::Spec(format!(
                "max_history {} is below tau {} but warm users are requested",
                self.max_history, self.tau
            )));
        }
        let w = &self.intent_weights;
        if Intent::ALL.iter().any(|&i| !(w.get(i) >= 0.0)) {
            return Err(Error::Spec("intent weights must be non-negative".into()));
        }
        if self.samples > 0 && self.users == 0 {
            return Err(Error::Spec("samples requested without users".into()));
        }
        Ok(())
    }
}

/// Everything a fixture run produces. `pool` is the test split, which
/// holds every sample target.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub cutoff: i64,
    pub articles: Vec<Article>,
    pub train: Vec<Article>,
    pub pool: Vec<Article>,
    pub embeddings: Vec<EmbeddingRecord>,
    pub profiles: Vec<UserProfile>,
    pub histories: Vec<BehaviorHistory>,
    pub samples: Vec<EvalSample>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a FixtureSpec,
    cutoff: i64,
    articles: usize,
    train: usize,
    pool: usize,
    users: usize,
    samples: usize,
}

pub const FILES: [&str; 7] = [
    "articles.jsonl",
    "train.jsonl",
    "pool.jsonl",
    "embeddings.jsonl",
    "profiles.jsonl",
    "histories.jsonl",
    "samples.jsonl",
];

impl Fixture {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        use crate::jsonl::write;
        write(dir.join("articles.jsonl"), &self.articles)?;
        write(dir.join("train.jsonl"), &self.train)?;
        write(dir.join("pool.jsonl"), &self.pool)?;
        if !self.embeddings.is_empty() {
            write(dir.join("embeddings.jsonl"), &self.embeddings)?;
        }
        write(dir.join("profiles.jsonl"), &self.profiles)?;
        write(dir.join("histories.jsonl"), &self.histories)?;
        write(dir.join("samples.jsonl"), &self.samples)?;
        let manifest = Manifest {
            spec: &self.spec,
            cutoff: self.cutoff,
            articles: self.articles.len(),
            train: self.train.len(),
            pool: self.pool.len(),
            users: self.profiles.len(),
            samples: self.samples.len(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn zipf(n: usize, s: f64) -> Result<Zipf<f64>> {
    Zipf::new(n as u64, s).map_err(|e| Error::Spec(format!("zipf: {e}")))
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("finite scale");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

struct Codes {
    s2_perm: Vec<Vec<u16>>,
    centers: HashMap<(u16, u16), [u16; BUCKET_CENTERS]>,
}

fn generate_articles(spec: &FixtureSpec) -> Result<Vec<Article>> {
    let mut rng = rng_for(spec.seed, 1);
    let z1 = zipf(LAYER_SIZES[0], spec.zipf_exponent)?;
    let z2 = zipf(LAYER_SIZES[1], spec.zipf_exponent)?;
    let spread = Normal::new(0.0, S3_SPREAD).expect("finite spread");
    let mut codes = Codes {
        s2_perm: (0..LAYER_SIZES[0])
            .map(|_| {
                let mut p: Vec<u16> = (0..LAYER_SIZES[1] as u16).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect(),
        centers: HashMap::new(),
    };
    let span = spec.span_days as i64 * 86_400;
    let mut raw: Vec<(i64, Sid, usize, [usize; 2])> = (0..spec.articles)
        .map(|_| {
            let s1 = z1.sample(&mut rng) as u16 - 1;
            let s2 = codes.s2_perm[s1 as usize][z2.sample(&mut rng) as usize - 1];
            let centers = *codes.centers.entry((s1, s2)).or_insert_with(|| {
                let mut c = [0u16; BUCKET_CENTERS];
                for x in &mut c {
                    *x = rng.gen_range(0..LAYER_SIZES[2] as u16);
                }
                c
            });
            let center = centers[rng.gen_range(0..BUCKET_CENTERS)] as f64;
            let s3 = (center + spread.sample(&mut rng)).round().clamp(0.0, LAYER_SIZES[2] as f64 - 1.0) as u16;
            let s4 = rng.gen_range(0..LAYER_SIZES[3] as u16);
            let category = if rng.gen_bool(spec.category_noise) {
                rng.gen_range(0..spec.categories)
            } else {
                s1 as usize % spec.categories
            };
            let t0 = s2 as usize % TAGS_PER_CATEGORY;
            let mut t1 = rng.gen_range(0..TAGS_PER_CATEGORY);
            if t1 == t0 {
                t1 = (t1 + 1) % TAGS_PER_CATEGORY;
            }
            let ts = spec.start_ts + rng.gen_range(0..span);
            (ts, Sid { s1, s2, s3, s4 }, category, [t0, t1])
        })
        .collect();
    raw.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.codes().cmp(&b.1.codes())));
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, (ts, sid, category, tags))| {
            let name = CATEGORY_NAMES[category];
            Article {
                id: format!("a{i:07}"),
                title: format!("{name} report {i}"),
                category: name.to_string(),
                tags: tags.iter().map(|t| format!("{name}_{t}")).collect(),
                published_at: ts,
                sid,
            }
        })
        .collect())
}

fn generate_embeddings(spec: &FixtureSpec, articles: &[Article]) -> Result<Vec<EmbeddingRecord>> {
    let dim = spec.embedding_dim;
    if dim == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_for(spec.seed, 2);
    let l1: Vec<Vec<f64>> = (0..LAYER_SIZES[0]).map(|_| gaussian(&mut rng, dim, 4.0)).collect();
    let l3: Vec<Vec<f64>> = (0..LAYER_SIZES[2]).map(|_| gaussian(&mut rng, dim, 0.4)).collect();
    let mut l2: HashMap<(u16, u16), Vec<f64>> = HashMap::new();
    articles
        .iter()
        .map(|a| {
            let sid = a.sid;
            let mid = l2
                .entry((sid.s1, sid.s2))
                .or_insert_with(|| gaussian(&mut rng, dim, 1.5))
                .clone();
            let noise = gaussian(&mut rng, dim, 0.1);
            let v: Vec<f64> = (0..dim)
                .map(|d| l1[sid.s1 as usize][d] + mid[d] + l3[sid.s3 as usize][d] + noise[d])
                .collect();
            Ok(EmbeddingRecord {
                id: a.id.clone(),
                embedding: Embedding::new(v)?,
            })
        })
        .collect()
}

/// Article lists keyed the ways preference draws need.
struct Split<'a> {
    all: Vec<&'a Article>,
    by_s1: HashMap<u16, Vec<&'a Article>>,
    by_bucket: HashMap<(u16, u16), Vec<&'a Article>>,
    by_category: HashMap<&'a str, Vec<&'a Article>>,
}

impl<'a> Split<'a> {
    fn new(articles: &'a [Article]) -> Self {
        let mut s = Split {
            all: articles.iter().collect(),
            by_s1: HashMap::new(),
            by_bucket: HashMap::new(),
            by_category: HashMap::new(),
        };
        for a in articles {
            s.by_s1.entry(a.sid.s1).or_default().push(a);
            s.by_bucket.entry((a.sid.s1, a.sid.s2)).or_default().push(a);
            s.by_category.entry(a.category.as_str()).or_default().push(a);
        }
        s
    }

    fn uniform(&self, rng: &mut ChaCha8Rng) -> &'a Article {
        self.all[rng.gen_range(0..self.all.len())]
    }
}

struct Taste {
    /// (s1, favourite s2, weight)
    homes: Vec<(u16, u16, f64)>,
}

impl Taste {
    fn draw<'a>(&self, split: &Split<'a>, concentration: f64, rng: &mut ChaCha8Rng) -> &'a Article {
        if rng.gen_bool(concentration) {
            let pick = if self.homes.len() == 1 || rng.gen_bool(self.homes[0].2) {
                &self.homes[0]
            } else {
                &self.homes[1]
            };
            let bucket = split.by_bucket.get(&(pick.0, pick.1));
            let code = split.by_s1.get(&pick.0);
            let list = if rng.gen_bool(0.5) { bucket.or(code) } else { code };
            if let Some(list) = list {
                return list[rng.gen_range(0..list.len())];
            }
        }
        split.uniform(rng)
    }
}

fn category_weights(clicks: &[Click], since: i64) -> Vec<CategoryWeight> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let recent: Vec<&Click> = clicks.iter().filter(|c| c.timestamp >= since).collect();
    for c in &recent {
        *counts.entry(c.category.as_str()).or_default() += 1;
    }
    let mut out: Vec<CategoryWeight> = counts
        .into_iter()
        .map(|(c, n)| CategoryWeight {
            category: c.to_string(),
            weight: (n as f64 / recent.len() as f64 * 1000.0).round() / 1000.0,
        })
        .collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.category.cmp(&b.category)));
    out.truncate(3);
    out
}

const AGE_RANGES: [&str; 5] = ["18-24", "25-34", "35-44", "45-54", "55+"];
const GENDERS: [&str; 3] = ["female", "male", "unspecified"];
const LOCATIONS: [&str; 6] = ["north", "south", "east", "west", "central", "overseas"];

/// Generate a complete fixture.
pub fn make_synthetic_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let articles = generate_articles(spec)?;
    let embeddings = generate_embeddings(spec, &articles)?;
    let span = spec.span_days as i64 * 86_400;
    let cutoff = spec.start_ts + ((1.0 - spec.test_fraction) * span as f64) as i64;
    let (train, pool) = temporal_split(&articles, cutoff);

    let (n_pure, n_hybrid) = (spec.n_pure(), spec.n_hybrid());
    if n_hybrid + spec.n_warm() > 0 && train.is_empty() {
        return Err(Error::Spec("users with history need a non-empty train split".into()));
    }
    let train_split = Split::new(&train);
    let test_split = Split::new(&pool);

    let mut rng = rng_for(spec.seed, 3);
    let z1 = zipf(LAYER_SIZES[0], spec.zipf_exponent)?;
    let z2 = zipf(LAYER_SIZES[1], spec.zipf_exponent)?;
    let mut tastes = Vec::with_capacity(spec.users);
    let mut profiles = Vec::with_capacity(spec.users);
    let mut histories = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let user_id = format!("u{u:06}");
        let primary = z1.sample(&mut rng) as u16 - 1;
        let mut homes = vec![(primary, 0u16, 0.7)];
        let secondary = z1.sample(&mut rng) as u16 - 1;
        if secondary != primary && rng.gen_bool(0.5) {
            homes.push((secondary, 0, 0.3));
        } else {
            homes[0].2 = 1.0;
        }
        for h in &mut homes {
            // Favourite mid code: a popular topic within the home code.
            let rank = z2.sample(&mut rng) as usize - 1;
            h.1 = train_split
                .by_s1
                .get(&h.0)
                .and_then(|l| l.get(rank % l.len()))
                .map_or(rank as u16, |a| a.sid.s2);
        }
        let taste = Taste { homes };
        let len = if u < n_pure {
            0
        } else if u < n_pure + n_hybrid {
            rng.gen_range(1..spec.tau)
        } else {
            rng.gen_range(spec.tau..=spec.max_history.max(spec.tau))
        };
        let mut clicks: Vec<Click> = (0..len)
            .map(|_| {
                let a = taste.draw(&train_split, spec.concentration, &mut rng);
                Click {
                    article_id: a.id.clone(),
                    sid: a.sid,
                    timestamp: (a.published_at + rng.gen_range(0..6 * 3600)).min(cutoff),
                    dwell_seconds: rng.gen_range(10..300) as f64,
                    title: a.title.clone(),
                    category: a.category.clone(),
                    tags: a.tags.clone(),
                }
            })
            .collect();
        clicks.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.article_id.cmp(&b.article_id)));

        let mut declared: Vec<String> = Vec::new();
        for h in &taste.homes {
            let c = CATEGORY_NAMES[h.0 as usize % spec.categories].to_string();
            if !declared.contains(&c) {
                declared.push(c);
            }
        }
        let mut hours: Vec<u8> = (0..rng.gen_range(2..5)).map(|_| rng.gen_range(0..24)).collect();
        hours.sort_unstable();
        hours.dedup();
        let video = (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0;
        profiles.push(UserProfile {
            user_id: user_id.clone(),
            demographics: Demographics {
                age_range: AGE_RANGES[rng.gen_range(0..AGE_RANGES.len())].into(),
                gender: GENDERS[rng.gen_range(0..GENDERS.len())].into(),
                location: LOCATIONS[rng.gen_range(0..LOCATIONS.len())].into(),
            },
            declared_interests: declared,
            longterm_prefs_30d: category_weights(&clicks, cutoff - 30 * 86_400),
            longterm_prefs_7d: category_weights(&clicks, cutoff - 7 * 86_400),
            activity: Activity {
                active_hours: hours,
                daily_duration_minutes: rng.gen_range(5..120) as f64,
                engagement_level: match len {
                    0 => "new",
                    l if l < spec.tau => "low",
                    l if l < 2 * spec.tau => "medium",
                    _ => "high",
                }
                .into(),
            },
            format_affinity: FormatAffinity {
                video,
                text: ((1.0 - video) * 100.0).round() / 100.0,
            },
        });
        histories.push(BehaviorHistory { user_id, clicks });
        tastes.push(taste);
    }

    let samples = generate_samples(spec, &test_split, &profiles, &histories, &tastes, &mut rng)?;
    Ok(Fixture {
        spec: spec.clone(),
        cutoff,
        train,
        pool,
        articles,
        embeddings,
        profiles,
        histories,
        samples,
    })
}

fn generate_samples(
    spec: &FixtureSpec,
    test: &Split<'_>,
    profiles: &[UserProfile],
    histories: &[BehaviorHistory],
    tastes: &[Taste],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EvalSample>> {
    if spec.samples == 0 {
        return Ok(Vec::new());
    }
    let eligible = |intent: Intent| -> Vec<usize> {
        (0..profiles.len())
            .filter(|&u| {
                let len = histories[u].len();
                match intent {
                    Intent::CandidateSelection => true,
                    Intent::NextItem | Intent::Diversity => len >= spec.tau,
                    Intent::Feedback => len > 0,
                    Intent::ColdstartPadr => len > 0 && len < spec.tau,
                    Intent::PureColdstart => len == 0,
                }
            })
            .collect()
    };
    let pools: Vec<Vec<usize>> = Intent::ALL.iter().map(|&i| eligible(i)).collect();
    let weights: Vec<f64> = Intent::ALL
        .iter()
        .zip(&pools)
        .map(|(&i, users)| if users.is_empty() { 0.0 } else { spec.intent_weights.get(i) })
        .collect();
    let chooser = WeightedIndex::new(&weights)
        .map_err(|_| Error::Spec("no intent has both positive weight and eligible users".into()))?;
    if test.all.is_empty() {
        return Err(Error::Spec("the test split is empty; raise test_fraction".into()));
    }
    if weights[0] > 0.0 && test.all.len() < CANDIDATES_PER_SAMPLE {
        return Err(Error::Spec(format!(
            "candidate selection needs {CANDIDATES_PER_SAMPLE} test articles, the split has {}",
            test.all.len()
        )));
    }

    (0..spec.samples)
        .map(|i| {
            let slot = chooser.sample(rng);
            let intent = Intent::ALL[slot];
            let users = &pools[slot];
            let u = users[rng.gen_range(0..users.len())];
            let (profile, history, taste) = (&profiles[u], &histories[u], &tastes[u]);
            let target = match intent {
                Intent::Diversity => {
                    let mut pick = test.uniform(rng);
                    for _ in 0..50 {
                        if !profile.declared_interests.contains(&pick.category) {
                            break;
                        }
                        pick = test.uniform(rng);
                    }
                    pick
                }
                Intent::Feedback => {
                    let last = history.clicks.last().map(|c| (c.sid.s1, c.sid.s2));
                    match last.and_then(|b| test.by_bucket.get(&b)) {
                        Some(list) => list[rng.gen_range(0..list.len())],
                        None => taste.draw(test, spec.concentration, rng),
                    }
                }
                _ => taste.draw(test, spec.concentration, rng),
            };
            let query = match intent {
                Intent::CandidateSelection => "which of these should I read?".to_string(),
                Intent::NextItem => "what else?".to_string(),
                Intent::Diversity => "show me something different".to_string(),
                Intent::Feedback => "more like the last one".to_string(),
                Intent::ColdstartPadr | Intent::PureColdstart => {
                    preset_query(profile.declared_interests.first().map_or("top", String::as_str))
                }
            };
            let candidates = (intent == Intent::CandidateSelection).then(|| {
                let mut picked: Vec<&Article> = vec![target];
                let same = test.by_category.get(target.category.as_str()).map_or(&[][..], Vec::as_slice);
                if same.len() >= 3 {
                    while picked.len() < 3 {
                        let a = same[rng.gen_range(0..same.len())];
                        if !picked.iter().any(|p| p.id == a.id) {
                            picked.push(a);
                        }
                    }
                }
                while picked.len() < CANDIDATES_PER_SAMPLE {
                    let a = test.uniform(rng);
                    if !picked.iter().any(|p| p.id == a.id) {
                        picked.push(a);
                    }
                }
                picked.shuffle(rng);
                picked.into_iter().map(|a| a.id.clone()).collect()
            });
            Ok(EvalSample {
                sample_id: format!("s{i:07}"),
                intent,
                user_id: profile.user_id.clone(),
                query,
                target: Target {
                    article_id: target.id.clone(),
                    sid: target.sid,
                },
                candidates,
                history_len: history.len(),
            })
        })
        .collect()
}

/// Stand-in for recorded model outputs, five prefixes per sample. With
/// probability `skill` the first prefix is the target's prefix with `s3`
/// moved by at most 2; the others come from the user's recent clicks, then
/// uniform codes.
pub fn mock_replay(fixture: &Fixture, skill: f64, seed: u64) -> Result<Vec<ReplayRecord>> {
    if !(0.0..=1.0).contains(&skill) {
        return Err(Error::Spec(format!("skill = {skill} outside [0, 1]")));
    }
    let histories: HashMap<&str, &BehaviorHistory> =
        fixture.histories.iter().map(|h| (h.user_id.as_str(), h)).collect();
    let mut rng = rng_for(seed, 4);
    Ok(fixture
        .samples
        .iter()
        .map(|s| {
            let mut prefixes = Vec::with_capacity(5);
            if rng.gen_bool(skill) {
                let mut p = s.target.sid.prefix();
                let moved = p.s3 as i64 + rng.gen_range(-2..=2i64);
                p.s3 = moved.clamp(0, LAYER_SIZES[2] as i64 - 1) as u16;
                prefixes.push(p);
            }
            if let Some(h) = histories.get(s.user_id.as_str()) {
                for c in h.clicks[..s.history_len].iter().rev() {
                    if prefixes.len() == 5 {
                        break;
                    }
                    let p = c.sid.prefix();
                    if !prefixes.contains(&p) {
                        prefixes.push(p);
                    }
                }
            }
            while prefixes.len() < 5 {
                prefixes.push(SidPrefix {
                    s1: rng.gen_range(0..LAYER_SIZES[0] as u16),
                    s2: rng.gen_range(0..LAYER_SIZES[1] as u16),
                    s3: rng.gen_range(0..LAYER_SIZES[2] as u16),
                });
            }
            ReplayRecord {
                sample_id: s.sample_id.clone(),
                prefixes,
                reason: format!("mock output for {}", s.intent),
            }
        })
        .collect())
}
