//! Pluggable SID-prefix generators.
//!
//! The trained language model is represented only through [`ReplayGenerator`],
//! which returns recorded outputs by sample id. The other implementations
//! are baselines that let the serving stack and the evaluation harness run
//! end to end.

use std::collections::HashMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padr::UserContext;
use crate::pool::Article;
use crate::sid::{SidPrefix, LAYER_SIZES};

pub const DEFAULT_PREFIXES: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub prefixes: Vec<SidPrefix>,
    #[serde(default)]
    pub reason: String,
}

pub trait Generator: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput>;
}

/// Run `generator`, range-check every prefix and cap the list at `k`.
/// Everything that feeds the matcher goes through here.
pub fn run(generator: &dyn Generator, ctx: &UserContext, k: usize) -> Result<GeneratorOutput> {
    let mut out = generator.generate(ctx)?;
    for p in &out.prefixes {
        p.validate()?;
    }
    out.prefixes.truncate(k);
    Ok(out)
}

fn context_seed(seed: u64, ctx: &UserContext) -> u64 {
    let mut h = FnvHasher::default();
    h.write(ctx.rendered.as_bytes());
    if let Some(id) = &ctx.sample_id {
        h.write(&[0xff]);
        h.write(id.as_bytes());
    }
    seed ^ h.finish()
}

#[derive(Clone, Debug)]
enum RandomSource {
    Uniform,
    Sampled(Vec<SidPrefix>),
}

/// Random prefixes, reproducible per `(seed, context)`.
///
/// `uniform` draws each layer uniformly over its code range.
/// `sampled_from` draws uniformly from a supplied list, which makes the
/// prediction follow that list's code distribution.
#[derive(Clone, Debug)]
pub struct RandomGenerator {
    seed: u64,
    k: usize,
    source: RandomSource,
}

impl RandomGenerator {
    pub fn uniform(seed: u64, k: usize) -> Self {
        RandomGenerator {
            seed,
            k,
            source: RandomSource::Uniform,
        }
    }

    pub fn sampled_from(seed: u64, k: usize, prefixes: Vec<SidPrefix>) -> Result<Self> {
        if prefixes.is_empty() {
            return Err(Error::InvalidInput("nothing to sample prefixes from".into()));
        }
        Ok(RandomGenerator {
            seed,
            k,
            source: RandomSource::Sampled(prefixes),
        })
    }
}

impl Generator for RandomGenerator {
    fn name(&self) -> &str {
        "random"
    }

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(context_seed(self.seed, ctx));
        let prefixes = (0..self.k)
            .map(|_| match &self.source {
                RandomSource::Uniform => SidPrefix {
                    s1: rng.gen_range(0..LAYER_SIZES[0] as u16),
                    s2: rng.gen_range(0..LAYER_SIZES[1] as u16),
                    s3: rng.gen_range(0..LAYER_SIZES[2] as u16),
                },
                RandomSource::Sampled(list) => list[rng.gen_range(0..list.len() as u64) as usize],
            })
            .collect();
        Ok(GeneratorOutput {
            prefixes,
            reason: String::new(),
        })
    }
}

/// Prefixes ordered by frequency, ties by lexicographic prefix order.
pub fn prefix_frequencies<'a>(prefixes: impl IntoIterator<Item = &'a SidPrefix>) -> Vec<(SidPrefix, usize)> {
    let mut counts: HashMap<SidPrefix, usize> = HashMap::new();
    for p in prefixes {
        *counts.entry(*p).or_default() += 1;
    }
    let mut ranked: Vec<(SidPrefix, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The training pool's most frequent prefixes, the same for every user.
#[derive(Clone, Debug)]
pub struct PopularGenerator {
    top: Vec<SidPrefix>,
}

impl PopularGenerator {
    pub fn from_articles(train: &[Article], k: usize) -> Self {
        let prefixes: Vec<SidPrefix> = train.iter().map(|a| a.sid.prefix()).collect();
        PopularGenerator {
            top: prefix_frequencies(&prefixes).into_iter().take(k).map(|(p, _)| p).collect(),
        }
    }

    pub fn top(&self) -> &[SidPrefix] {
        &self.top
    }
}

impl Generator for PopularGenerator {
    fn name(&self) -> &str {
        "popular"
    }

    fn generate(&self, _ctx: &UserContext) -> Result<GeneratorOutput> {
        Ok(GeneratorOutput {
            prefixes: self.top.clone(),
            reason: "most popular topics".into(),
        })
    }
}

/// Most frequent prefixes in the user's own history. Equal counts prefer the
/// prefix clicked most recently. Users without history get nothing.
#[derive(Clone, Debug)]
pub struct HistPopGenerator {
    k: usize,
}

impl HistPopGenerator {
    pub fn new(k: usize) -> Self {
        HistPopGenerator { k }
    }
}

impl Generator for HistPopGenerator {
    fn name(&self) -> &str {
        "histpop"
    }

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput> {
        // prefix -> (count, position of latest click)
        let mut stats: HashMap<SidPrefix, (usize, usize)> = HashMap::new();
        for (i, click) in ctx.history.iter().enumerate() {
            let e = stats.entry(click.sid.prefix()).or_insert((0, i));
            e.0 += 1;
            e.1 = i;
        }
        let mut ranked: Vec<(SidPrefix, (usize, usize))> = stats.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(b.1 .1.cmp(&a.1 .1)));
        Ok(GeneratorOutput {
            prefixes: ranked.into_iter().take(self.k).map(|(p, _)| p).collect(),
            reason: if ctx.history.is_empty() {
                String::new()
            } else {
                "most read topics".into()
            },
        })
    }
}

/// Editorial category -> prefixes ranked by frequency within that category.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryMap(HashMap<String, Vec<SidPrefix>>);

impl CategoryMap {
    pub fn build(train: &[Article]) -> Self {
        let mut by_cat: HashMap<&str, Vec<SidPrefix>> = HashMap::new();
        for a in train {
            by_cat.entry(&a.category).or_default().push(a.sid.prefix());
        }
        CategoryMap(
            by_cat
                .into_iter()
                .map(|(c, prefixes)| {
                    (
                        c.to_string(),
                        prefix_frequencies(&prefixes).into_iter().map(|(p, _)| p).collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn from_map(map: HashMap<String, Vec<SidPrefix>>) -> Self {
        CategoryMap(map)
    }

    pub fn get(&self, category: &str) -> Option<&[SidPrefix]> {
        self.0.get(category).map(Vec::as_slice)
    }

    pub fn dominant(&self, category: &str) -> Option<SidPrefix> {
        self.get(category).and_then(|p| p.first().copied())
    }
}

pub fn profile_category_generate(ctx: &UserContext, map: &CategoryMap, k: usize) -> GeneratorOutput {
    for category in ctx.profile.interest_categories() {
        if let Some(prefixes) = map.get(&category) {
            if !prefixes.is_empty() {
                return GeneratorOutput {
                    prefixes: prefixes.iter().take(k).copied().collect(),
                    reason: format!("interest in {category}"),
                };
            }
        }
    }
    GeneratorOutput::default()
}

/// Cold-start stand-in: the dominant prefixes of the user's strongest
/// profile category.
#[derive(Clone, Debug)]
pub struct ProfileCategoryGenerator {
    map: CategoryMap,
    k: usize,
}

impl ProfileCategoryGenerator {
    pub fn new(map: CategoryMap, k: usize) -> Self {
        ProfileCategoryGenerator { map, k }
    }
}

impl Generator for ProfileCategoryGenerator {
    fn name(&self) -> &str {
        "profile"
    }

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput> {
        Ok(profile_category_generate(ctx, &self.map, self.k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub sample_id: String,
    pub prefixes: Vec<SidPrefix>,
    #[serde(default)]
    pub reason: String,
}

#[derive(Deserialize)]
struct RawReplayRecord {
    sample_id: String,
    prefixes: Vec<Vec<i64>>,
    #[serde(default)]
    reason: String,
}

/// Recorded generator outputs keyed by sample id.
#[derive(Clone, Debug, Default)]
pub struct ReplayGenerator {
    records: Arc<HashMap<String, ReplayRecord>>,
}

impl ReplayGenerator {
    pub fn from_records(records: Vec<ReplayRecord>) -> Result<Self> {
        let mut map = HashMap::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            if map.contains_key(&r.sample_id) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate sample_id `{}`", r.sample_id),
                });
            }
            map.insert(r.sample_id.clone(), r);
        }
        Ok(ReplayGenerator {
            records: Arc::new(map),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut map = HashMap::new();
        crate::jsonl::visit_lines(BufReader::new(File::open(path)?), |line, raw: RawReplayRecord| {
            let prefixes = raw
                .prefixes
                .iter()
                .map(|codes| SidPrefix::from_codes(codes))
                .collect::<Result<Vec<_>>>()?;
            if map.contains_key(&raw.sample_id) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate sample_id `{}`", raw.sample_id),
                });
            }
            map.insert(
                raw.sample_id.clone(),
                ReplayRecord {
                    sample_id: raw.sample_id,
                    prefixes,
                    reason: raw.reason,
                },
            );
            Ok(())
        })?;
        Ok(ReplayGenerator {
            records: Arc::new(map),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, sample_id: &str) -> Option<&ReplayRecord> {
        self.records.get(sample_id)
    }
}

pub fn write_replay(path: impl AsRef<Path>, records: &[ReplayRecord]) -> Result<()> {
    crate::jsonl::write(path, records)
}

impl Generator for ReplayGenerator {
    fn name(&self) -> &str {
        "replay"
    }

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput> {
        let id = ctx
            .sample_id
            .as_deref()
            .ok_or_else(|| Error::MissingRecord("<untagged context>".into()))?;
        let r = self.records.get(id).ok_or_else(|| Error::MissingRecord(id.to_string()))?;
        Ok(GeneratorOutput {
            prefixes: r.prefixes.clone(),
            reason: r.reason.clone(),
        })
    }
}

/// Command-line generator selector: `random`, `popular`, `histpop`,
/// `profile` or `replay:<path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeneratorSpec {
    Random,
    Popular,
    HistPop,
    Profile,
    Replay(PathBuf),
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(GeneratorSpec::Random),
            "popular" => Ok(GeneratorSpec::Popular),
            "histpop" => Ok(GeneratorSpec::HistPop),
            "profile" => Ok(GeneratorSpec::Profile),
            _ => match s.strip_prefix("replay:") {
                Some(path) if !path.is_empty() => Ok(GeneratorSpec::Replay(PathBuf::from(path))),
                _ => Err(Error::InvalidInput(format!(
                    "unknown generator `{s}` (expected random, popular, histpop, profile or replay:<path>)"
                ))),
            },
        }
    }
}

impl GeneratorSpec {
    /// Instantiate. `train` feeds the popularity and category baselines.
    pub fn build(&self, train: &[Article], seed: u64, k: usize) -> Result<Arc<dyn Generator>> {
        Ok(match self {
            GeneratorSpec::Random => Arc::new(RandomGenerator::uniform(seed, k)),
            GeneratorSpec::Popular => Arc::new(PopularGenerator::from_articles(train, k)),
            GeneratorSpec::HistPop => Arc::new(HistPopGenerator::new(k)),
            GeneratorSpec::Profile => Arc::new(ProfileCategoryGenerator::new(CategoryMap::build(train), k)),
            GeneratorSpec::Replay(path) => Arc::new(ReplayGenerator::load(path)?),
        })
    }
}
