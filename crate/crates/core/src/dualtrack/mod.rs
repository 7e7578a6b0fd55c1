//! Dual-track serving.
//!
//! The fast track answers every request from whatever the cache holds for
//! the request's context hash, falling back through four levels:
//!
//! | level | source                                              |
//! |-------|-----------------------------------------------------|
//! | 1     | cached prefixes, fuzzy matched at `delta`           |
//! | 2     | the same prefixes at `broadened_delta`              |
//! | 3     | most popular articles in the profile's top categories |
//! | 4     | pool-wide trending articles                         |
//!
//! Level 1 needs at least `min_matches` distinct articles, every other
//! level accepts one. A cache miss schedules the enhance track and starts
//! at level 3. The enhance track runs a generator on a bounded worker pool
//! and writes the result into the cache; it never runs on the caller's
//! thread unless [`Engine::enhance`] is called directly.
//!
//! Requests read one [`Snapshot`] for their whole lifetime; refreshes swap
//! in a new one atomically.

pub mod cache;
pub mod hash;
pub mod metrics;

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwap;
use crossbeam_channel::{Sender, TrySendError};
use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{self, Generator};
use crate::matcher::{fuzzy_match, MatchResult};
use crate::padr::{UserContext, UserProfile};
use crate::pool::{Article, NewsPool, PrefixIndex};
use crate::ranking::{rank, InterestProfile, RankedCandidate};
use crate::sid::SidPrefix;

pub use cache::{CacheEntry, PrefixCache, DEFAULT_TTL_SECONDS, MAX_CACHED_PREFIXES};
pub use hash::{ctx_hash, hash_bytes};
pub use metrics::{percentile, FallbackRates, TrackMetrics};

/// Number of profile categories level 3 draws from.
pub const FALLBACK_CATEGORIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub delta: u32,
    pub broadened_delta: u32,
    pub k: usize,
    pub lambda: f64,
    pub ttl_seconds: i64,
    pub min_matches: usize,
    pub enhance_workers: usize,
    pub enhance_queue: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            delta: 5,
            broadened_delta: 10,
            k: 10,
            lambda: 0.1,
            ttl_seconds: DEFAULT_TTL_SECONDS,
            min_matches: 3,
            enhance_workers: 2,
            enhance_queue: 1024,
        }
    }
}

impl ServeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.broadened_delta < self.delta {
            return Err(Error::InvalidInput("broadened_delta is below delta".into()));
        }
        if self.ttl_seconds < 0 {
            return Err(Error::InvalidInput("ttl_seconds is negative".into()));
        }
        Ok(())
    }
}

/// Unix seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(now: i64) -> Self {
        ManualClock(AtomicI64::new(now))
    }

    pub fn set(&self, now: i64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, seconds: i64) {
        self.0.fetch_add(seconds, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// An immutable (pool, index) pair plus the popularity orderings the
/// fallback levels read.
#[derive(Debug)]
pub struct Snapshot {
    index: PrefixIndex,
    clicks: Option<Arc<HashMap<String, u64>>>,
    by_category: HashMap<String, Vec<u32>>,
    trending: Vec<u32>,
}

impl Snapshot {
    /// Popularity is click count when `clicks` is given, else recency.
    /// Ties: newer first, then id.
    pub fn new(pool: Arc<NewsPool>, clicks: Option<Arc<HashMap<String, u64>>>) -> Self {
        let index = PrefixIndex::build(pool);
        let pool = index.pool().clone();
        let count = |a: &Article| clicks.as_ref().map_or(0, |c| c.get(&a.id).copied().unwrap_or(0));
        let mut trending: Vec<u32> = (0..pool.len() as u32).collect();
        trending.sort_by(|&x, &y| {
            let (a, b) = (pool.article(x as usize), pool.article(y as usize));
            count(b)
                .cmp(&count(a))
                .then_with(|| b.published_at.cmp(&a.published_at))
                .then_with(|| a.id.cmp(&b.id))
        });
        let mut by_category: HashMap<String, Vec<u32>> = HashMap::new();
        for &i in &trending {
            by_category
                .entry(pool.article(i as usize).category.clone())
                .or_default()
                .push(i);
        }
        Snapshot {
            index,
            clicks,
            by_category,
            trending,
        }
    }

    pub fn pool(&self) -> &Arc<NewsPool> {
        self.index.pool()
    }

    pub fn index(&self) -> &PrefixIndex {
        &self.index
    }

    pub fn clicks(&self) -> Option<&Arc<HashMap<String, u64>>> {
        self.clicks.as_ref()
    }

    /// Articles of `category`, most popular first.
    pub fn popular_in(&self, category: &str) -> impl Iterator<Item = &Article> {
        let pool = self.pool();
        self.by_category
            .get(category)
            .into_iter()
            .flatten()
            .map(move |&i| pool.article(i as usize))
    }

    pub fn trending(&self) -> impl Iterator<Item = &Article> {
        let pool = self.pool();
        self.trending.iter().map(move |&i| pool.article(i as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedFrom {
    Cache = 0,
    Enhance = 1,
    #[serde(rename = "fallback_level_2")]
    FallbackLevel2 = 2,
    #[serde(rename = "fallback_level_3")]
    FallbackLevel3 = 3,
    #[serde(rename = "fallback_level_4")]
    FallbackLevel4 = 4,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub lookup_ms: f64,
    pub match_ms: f64,
    pub rank_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServeResponse {
    pub articles: Vec<RankedCandidate>,
    pub served_from: ServedFrom,
    pub latency_breakdown: LatencyBreakdown,
    pub pool_version: u64,
    pub levels_tried: Vec<u8>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reason: String,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Run `generator` on `ctx` and install the result for `ctx_hash(ctx)`.
/// Returns whether an entry was written; empty output writes nothing.
pub fn enhance_into(
    generator: &dyn Generator,
    cache: &PrefixCache,
    ctx: &UserContext,
    now: i64,
    ttl_seconds: i64,
) -> Result<bool> {
    let out = generator::run(generator, ctx, MAX_CACHED_PREFIXES)?;
    if out.prefixes.is_empty() {
        return Ok(false);
    }
    cache.put(CacheEntry {
        ctx_hash: ctx_hash(ctx),
        prefixes: out.prefixes,
        reason: out.reason,
        ts: now,
        ttl_seconds,
    })?;
    Ok(true)
}

/// Enhance every preset context of every profile. Failures are logged and
/// skipped. Returns the number of entries written.
pub fn warm_cache(
    profiles: &[UserProfile],
    generator: &dyn Generator,
    cache: &PrefixCache,
    now: i64,
    ttl_seconds: i64,
) -> usize {
    profiles
        .iter()
        .flat_map(crate::padr::preset_queries)
        .filter(|ctx| match enhance_into(generator, cache, ctx, now, ttl_seconds) {
            Ok(written) => written,
            Err(e) => {
                log::warn!("warm_cache: user `{}`: {e}", ctx.profile.user_id);
                false
            }
        })
        .count()
}

struct Job {
    hash: u64,
    ctx: UserContext,
}

struct Enhancer {
    tx: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    pending: Arc<DashMap<u64, ()>>,
}

impl Drop for Enhancer {
    fn drop(&mut self) {
        self.tx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

struct Shared {
    cache: Arc<PrefixCache>,
    clock: Arc<dyn Clock>,
    metrics: metrics::Metrics,
    config: ServeConfig,
}

pub struct Engine {
    snapshot: ArcSwap<Snapshot>,
    shared: Arc<Shared>,
    generator: Option<Arc<dyn Generator>>,
    enhancer: Option<Enhancer>,
    refresh_lock: Mutex<()>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("pool_version", &self.snapshot.load().pool().version())
            .field("cache_entries", &self.shared.cache.len())
            .field("config", &self.shared.config)
            .finish()
    }
}

impl Engine {
    pub fn new(snapshot: Snapshot, cache: Arc<PrefixCache>, config: ServeConfig) -> Result<Self> {
        Engine::with_clock(snapshot, cache, config, Arc::new(SystemClock))
    }

    pub fn with_clock(
        snapshot: Snapshot,
        cache: Arc<PrefixCache>,
        config: ServeConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Engine {
            snapshot: ArcSwap::from_pointee(snapshot),
            shared: Arc::new(Shared {
                cache,
                clock,
                metrics: metrics::Metrics::default(),
                config,
            }),
            generator: None,
            enhancer: None,
            refresh_lock: Mutex::new(()),
        })
    }

    /// Attach the enhance-track generator and start its workers. With
    /// `enhance_workers == 0` misses are not scheduled and only
    /// [`Engine::enhance`] writes the cache.
    pub fn with_generator(mut self, generator: Arc<dyn Generator>) -> Self {
        self.enhancer = None;
        let workers = self.shared.config.enhance_workers;
        if workers > 0 {
            let (tx, rx) = crossbeam_channel::bounded::<Job>(self.shared.config.enhance_queue.max(1));
            let pending: Arc<DashMap<u64, ()>> = Arc::new(DashMap::new());
            let handles = (0..workers)
                .map(|i| {
                    let rx = rx.clone();
                    let shared = self.shared.clone();
                    let generator = generator.clone();
                    let pending = pending.clone();
                    std::thread::Builder::new()
                        .name(format!("enhance-{i}"))
                        .spawn(move || {
                            for job in rx.iter() {
                                shared.run_enhance(&*generator, &job.ctx);
                                pending.remove(&job.hash);
                            }
                        })
                        .expect("spawn enhance worker")
                })
                .collect();
            self.enhancer = Some(Enhancer {
                tx: Some(tx),
                workers: handles,
                pending,
            });
        }
        self.generator = Some(generator);
        self
    }

    pub fn config(&self) -> &ServeConfig {
        &self.shared.config
    }

    pub fn cache(&self) -> &Arc<PrefixCache> {
        &self.shared.cache
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.shared.clock
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.load_full()
    }

    pub fn metrics(&self) -> TrackMetrics {
        self.shared.metrics.snapshot()
    }

    pub fn swap_snapshot(&self, snapshot: Snapshot) {
        let _guard = self.refresh_lock.lock();
        self.snapshot.store(Arc::new(snapshot));
    }

    /// Build the next pool version from the current one and swap it in.
    /// Click counts carry over. Returns the new version.
    pub fn refresh(&self, add: Vec<Article>, remove: &[String]) -> Result<u64> {
        let _guard = self.refresh_lock.lock();
        let current = self.snapshot.load_full();
        let next = current.pool().refresh(add, remove)?.pool;
        let version = next.version();
        self.snapshot
            .store(Arc::new(Snapshot::new(Arc::new(next), current.clicks.clone())));
        Ok(version)
    }

    /// Queue `ctx` for the enhance track. Returns false when there is no
    /// worker pool, the context is already queued, or the queue is full.
    pub fn schedule_enhance(&self, ctx: &UserContext) -> bool {
        let Some(enh) = &self.enhancer else { return false };
        let Some(tx) = &enh.tx else { return false };
        let hash = ctx_hash(ctx);
        if enh.pending.insert(hash, ()).is_some() {
            return false;
        }
        match tx.try_send(Job { hash, ctx: ctx.clone() }) {
            Ok(()) => {
                self.shared.metrics.enhance_scheduled.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                enh.pending.remove(&hash);
                self.shared.metrics.enhance_dropped.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Enhance tasks queued or running.
    pub fn pending_enhance(&self) -> usize {
        self.enhancer.as_ref().map_or(0, |e| e.pending.len())
    }

    /// Block until the enhance queue drains or `timeout` passes. Returns
    /// whether it drained.
    pub fn wait_enhance_idle(&self, timeout: Duration) -> bool {
        let start = Instant::now();
        while self.pending_enhance() > 0 {
            if start.elapsed() > timeout {
                return false;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    /// Run the enhance track for `ctx` on the calling thread.
    pub fn enhance(&self, ctx: &UserContext) -> Result<bool> {
        let generator = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::Generator("no generator attached".into()))?;
        let res = enhance_into(
            &**generator,
            &self.shared.cache,
            ctx,
            self.shared.clock.now(),
            self.shared.config.ttl_seconds,
        );
        self.shared.count_enhance(&res);
        res
    }

    /// Warm the cache with the attached generator.
    pub fn warm_cache(&self, profiles: &[UserProfile]) -> Result<usize> {
        let generator = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::Generator("no generator attached".into()))?;
        Ok(warm_cache(
            profiles,
            &**generator,
            &self.shared.cache,
            self.shared.clock.now(),
            self.shared.config.ttl_seconds,
        ))
    }

    /// Serve one request from the cache, scheduling the enhance track on a
    /// miss.
    pub fn fast_track(&self, ctx: &UserContext) -> Result<ServeResponse> {
        let start = Instant::now();
        let snapshot = self.snapshot.load_full();
        if snapshot.pool().is_empty() {
            return Err(Error::EmptyPool);
        }
        let now = self.shared.clock.now();
        let entry = self.shared.cache.get(ctx_hash(ctx), now);
        let lookup = start.elapsed();
        let hit = entry.is_some();
        let mut resp = match &entry {
            Some(e) => self.cascade(&snapshot, ctx, &e.prefixes, 1, ServedFrom::Cache, now)?,
            None => {
                self.schedule_enhance(ctx);
                self.cascade(&snapshot, ctx, &[], 3, ServedFrom::Cache, now)?
            }
        };
        if let Some(e) = entry {
            resp.reason = e.reason.clone();
        }
        resp.latency_breakdown.lookup_ms = ms(lookup);
        resp.latency_breakdown.total_ms = ms(start.elapsed());
        self.shared
            .metrics
            .record(hit, resp.served_from, resp.latency_breakdown.total_ms);
        Ok(resp)
    }

    /// Run the cascade from `start_level` (1..=4) with the given prefixes.
    /// A level-1 result is reported as served from the cache.
    pub fn fallback_cascade(&self, ctx: &UserContext, prefixes: &[SidPrefix], start_level: u8) -> Result<ServeResponse> {
        if !(1..=4).contains(&start_level) {
            return Err(Error::InvalidInput(format!("start level {start_level} outside 1..=4")));
        }
        let start = Instant::now();
        let snapshot = self.snapshot.load_full();
        if snapshot.pool().is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut resp = self.cascade(&snapshot, ctx, prefixes, start_level, ServedFrom::Cache, self.shared.clock.now())?;
        resp.latency_breakdown.total_ms = ms(start.elapsed());
        Ok(resp)
    }

    /// Generate prefixes synchronously and serve them without touching
    /// the cache. Used for offline evaluation of a generator.
    pub fn serve_with_generator(&self, ctx: &UserContext, generator: &dyn Generator) -> Result<ServeResponse> {
        let start = Instant::now();
        let snapshot = self.snapshot.load_full();
        if snapshot.pool().is_empty() {
            return Err(Error::EmptyPool);
        }
        let out = generator::run(generator, ctx, MAX_CACHED_PREFIXES)?;
        let lookup = start.elapsed();
        let level = if out.prefixes.is_empty() { 3 } else { 1 };
        let mut resp = self.cascade(&snapshot, ctx, &out.prefixes, level, ServedFrom::Enhance, self.shared.clock.now())?;
        resp.reason = out.reason;
        resp.latency_breakdown.lookup_ms = ms(lookup);
        resp.latency_breakdown.total_ms = ms(start.elapsed());
        Ok(resp)
    }

    fn cascade(
        &self,
        snapshot: &Snapshot,
        ctx: &UserContext,
        prefixes: &[SidPrefix],
        start_level: u8,
        level1: ServedFrom,
        now: i64,
    ) -> Result<ServeResponse> {
        let cfg = &self.shared.config;
        let interests = InterestProfile::from_clicks(&ctx.profile, &ctx.history);
        let mut breakdown = LatencyBreakdown::default();
        let mut tried = Vec::new();
        for level in start_level..=4 {
            tried.push(level);
            let t = Instant::now();
            let candidates = match level {
                1 => match_prefixes(snapshot, prefixes, cfg.delta, cfg.k),
                2 => match_prefixes(snapshot, prefixes, cfg.broadened_delta, cfg.k),
                3 => category_candidates(snapshot, &ctx.profile, cfg.k),
                _ => snapshot.trending().take(cfg.k).map(full_match).collect(),
            };
            breakdown.match_ms += ms(t.elapsed());
            let needed = if level == 1 { cfg.min_matches.max(1) } else { 1 };
            if candidates.len() < needed {
                continue;
            }
            let t = Instant::now();
            let mut articles = rank(&candidates, snapshot.pool(), &interests, now, cfg.lambda)?;
            articles.truncate(cfg.k);
            breakdown.rank_ms += ms(t.elapsed());
            let served_from = match level {
                1 => level1,
                2 => ServedFrom::FallbackLevel2,
                3 => ServedFrom::FallbackLevel3,
                _ => ServedFrom::FallbackLevel4,
            };
            return Ok(ServeResponse {
                articles,
                served_from,
                latency_breakdown: breakdown,
                pool_version: snapshot.pool().version(),
                levels_tried: tried,
                reason: String::new(),
            });
        }
        // Level 4 is empty only for an empty pool, which callers reject.
        Err(Error::EmptyPool)
    }
}

impl Shared {
    fn run_enhance(&self, generator: &dyn Generator, ctx: &UserContext) {
        let res = enhance_into(generator, &self.cache, ctx, self.clock.now(), self.config.ttl_seconds);
        if let Err(e) = &res {
            log::warn!("enhance failed for user `{}`: {e}", ctx.profile.user_id);
        }
        self.count_enhance(&res);
    }

    fn count_enhance(&self, res: &Result<bool>) {
        let counter = match res {
            Ok(_) => &self.metrics.enhance_completed,
            Err(_) => &self.metrics.enhance_failed,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

fn full_match(a: &Article) -> MatchResult {
    MatchResult {
        article_id: a.id.clone(),
        score: 1.0,
        s3_distance: 0,
    }
}

/// Fuzzy match every prefix and merge, keeping each article's best match.
fn match_prefixes(snapshot: &Snapshot, prefixes: &[SidPrefix], delta: u32, k: usize) -> Vec<MatchResult> {
    let mut merged: Vec<MatchResult> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in prefixes {
        for m in fuzzy_match(p, snapshot.index(), delta, k) {
            match seen.get(&m.article_id) {
                Some(&i) => {
                    if m.score > merged[i].score {
                        merged[i] = m;
                    }
                }
                None => {
                    seen.insert(m.article_id.clone(), merged.len());
                    merged.push(m);
                }
            }
        }
    }
    merged
}

fn category_candidates(snapshot: &Snapshot, profile: &UserProfile, k: usize) -> Vec<MatchResult> {
    profile
        .interest_categories()
        .iter()
        .take(FALLBACK_CATEGORIES)
        .flat_map(|c| snapshot.popular_in(c).take(k))
        .map(full_match)
        .collect()
}
