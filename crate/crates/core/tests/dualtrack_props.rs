mod common;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{arb_pool, arb_prefix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidground_core::dualtrack::{
    ctx_hash, percentile, CacheEntry, Engine, ManualClock, PrefixCache, ServeConfig, ServedFrom, Snapshot,
};
use sidground_core::generator::{Generator, GeneratorOutput};
use sidground_core::padr::{route, BehaviorHistory, UserContext, UserProfile};
use sidground_core::pool::NewsPool;
use sidground_core::{Result, SidPrefix};

fn cold_ctx(user: &str, query: &str, interests: &[&str]) -> UserContext {
    let profile = UserProfile {
        user_id: user.into(),
        declared_interests: interests.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    route(&profile, &BehaviorHistory::empty(user), query, 10)
}

fn engine(pool: NewsPool, config: ServeConfig, clock: Arc<ManualClock>) -> Engine {
    Engine::with_clock(Snapshot::new(Arc::new(pool), None), Arc::new(PrefixCache::new()), config, clock).unwrap()
}

fn sync_config() -> ServeConfig {
    ServeConfig { enhance_workers: 0, ..Default::default() }
}

/// 10^6 distinct contexts; the 64-bit birthday expectation is ~2.7e-8
/// collisions, so any collision is a failure.
#[test]
fn no_hash_collisions_in_a_million_contexts() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rendered = HashSet::with_capacity(1_000_000);
    let mut hashes = HashSet::with_capacity(1_000_000);
    while rendered.len() < 1_000_000 {
        let ctx = cold_ctx(&format!("u{}", rng.gen::<u32>()), &format!("q {:x}", rng.gen::<u64>()), &["tech"]);
        let h = ctx_hash(&ctx);
        if rendered.insert(ctx.rendered) {
            assert!(hashes.insert(h), "collision after {} contexts", rendered.len());
        }
    }
}

/// Each call emits prefixes that all carry the call number, so a torn
/// entry would mix numbers.
struct Stamped(AtomicU64);

impl Generator for Stamped {
    fn name(&self) -> &str {
        "stamped"
    }

    fn generate(&self, _ctx: &UserContext) -> Result<GeneratorOutput> {
        let n = self.0.fetch_add(1, Ordering::SeqCst) + 1;
        let s3 = (n % 128) as u16;
        Ok(GeneratorOutput {
            prefixes: (0..10).map(|i| SidPrefix { s1: i, s2: (n % 64) as u16, s3 }).collect(),
            reason: format!("call {n}"),
        })
    }
}

#[test]
fn concurrent_enhances_leave_one_whole_entry() {
    let pool = NewsPool::from_articles(vec![common::article("a", sidground_core::Sid::new(0, 0, 0, 0).unwrap(), "tech", 1)]).unwrap();
    let gen = Arc::new(Stamped(AtomicU64::new(0)));
    let e = engine(pool, sync_config(), Arc::new(ManualClock::new(100))).with_generator(gen.clone());
    let ctx = cold_ctx("u", "same", &["tech"]);
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                for _ in 0..200 {
                    assert!(e.enhance(&ctx).unwrap());
                }
            });
        }
    });
    let entry = e.cache().get(ctx_hash(&ctx), 100).unwrap();
    let n: u64 = entry.reason.strip_prefix("call ").unwrap().parse().unwrap();
    assert!((1..=1600).contains(&n));
    for (i, p) in entry.prefixes.iter().enumerate() {
        assert_eq!(*p, SidPrefix { s1: i as u16, s2: (n % 64) as u16, s3: (n % 128) as u16 });
    }
    assert_eq!(e.cache().len(), 1);
}

/// Stands in for a remote model call: slow, but waiting rather than
/// computing.
struct Slow;

impl Generator for Slow {
    fn name(&self) -> &str {
        "slow"
    }

    fn generate(&self, ctx: &UserContext) -> Result<GeneratorOutput> {
        std::thread::sleep(Duration::from_millis(2));
        Ok(GeneratorOutput { prefixes: vec![SidPrefix { s1: 0, s2: (ctx_hash(ctx) % 64) as u16, s3: 0 }], reason: String::new() })
    }
}

#[test]
fn fast_track_is_not_slowed_by_enhance_load() {
    let f = sidground_core::eval::fixture::make_synthetic_fixture(&sidground_core::eval::fixture::FixtureSpec {
        articles: 20_000,
        users: 200,
        samples: 0,
        embedding_dim: 0,
        test_fraction: 0.0,
        ..Default::default()
    })
    .unwrap();
    let pool = NewsPool::from_articles(f.articles.clone()).unwrap();
    let served: Vec<UserContext> = f.profiles.iter().zip(&f.histories).map(|(p, h)| route(p, h, "now", 10)).collect();
    let prefixes: Vec<SidPrefix> = pool.articles().iter().map(|a| a.sid.prefix()).collect();
    let warmer = Arc::new(sidground_core::generator::RandomGenerator::sampled_from(1, 10, prefixes).unwrap());
    let config = ServeConfig { enhance_workers: 4, enhance_queue: 64, ..Default::default() };
    let e = engine(pool, config, Arc::new(ManualClock::new(f.cutoff))).with_generator(Arc::new(Slow));
    for ctx in &served {
        sidground_core::dualtrack::enhance_into(warmer.as_ref(), e.cache(), ctx, f.cutoff, 86_400).unwrap();
    }
    let measure = |e: &Engine| {
        let mut lat = Vec::with_capacity(4000);
        for round in 0..4000 {
            let r = e.fast_track(&served[round % served.len()]).unwrap();
            assert_eq!(r.served_from, ServedFrom::Cache);
            lat.push(r.latency_breakdown.total_ms);
        }
        percentile(&lat, 0.95)
    };
    let idle = measure(&e);
    let stop = std::sync::atomic::AtomicBool::new(false);
    let busy = std::thread::scope(|s| {
        s.spawn(|| {
            // Keep the queue full and all workers busy.
            let mut i = 0u64;
            while !stop.load(Ordering::Relaxed) {
                while e.pending_enhance() < 64 + 4 {
                    i += 1;
                    if !e.schedule_enhance(&cold_ctx(&format!("load{i}"), "x", &[])) {
                        break;
                    }
                }
                std::thread::sleep(Duration::from_millis(1));
            }
        });
        std::thread::sleep(Duration::from_millis(50));
        let p95 = measure(&e);
        stop.store(true, Ordering::Relaxed);
        p95
    });
    assert!(e.metrics().enhance_scheduled > 200);
    assert!(busy <= 2.0 * idle.max(0.05), "idle p95 {idle:.4} ms, under enhance load {busy:.4} ms");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entries_are_served_until_ttl_and_never_after(ttl in 0i64..1000, age in 0i64..2000) {
        let cache = PrefixCache::new();
        cache.put(CacheEntry { ctx_hash: 7, prefixes: vec![SidPrefix { s1: 1, s2: 1, s3: 1 }], reason: String::new(), ts: 1000, ttl_seconds: ttl }).unwrap();
        prop_assert_eq!(cache.get(7, 1000 + age).is_some(), age <= ttl);
    }

    #[test]
    fn cascade_terminates_grounded(pool in arb_pool(120), prefixes in prop::collection::vec(arb_prefix(), 0..5), start in 1u8..=4, cat in 0usize..5) {
        let p = NewsPool::from_articles(pool).unwrap();
        let e = engine(p.clone(), sync_config(), Arc::new(ManualClock::new(50)));
        let interests: &[&str] = if cat < 4 { &[["tech", "sports", "arts", "world"][cat]] } else { &[] };
        let ctx = cold_ctx("u", "q", interests);
        let r = e.fallback_cascade(&ctx, &prefixes, start).unwrap();
        prop_assert!(!r.levels_tried.is_empty());
        prop_assert_eq!(r.levels_tried[0], start);
        prop_assert!(*r.levels_tried.last().unwrap() <= 4);
        prop_assert!(r.levels_tried.windows(2).all(|w| w[1] == w[0] + 1));
        prop_assert!(!r.articles.is_empty() && r.articles.len() <= 10);
        prop_assert_eq!(r.pool_version, p.version());
        for a in &r.articles {
            prop_assert!(p.contains(&a.article_id));
        }
        let fast = e.fast_track(&ctx).unwrap();
        prop_assert!(fast.articles.iter().all(|a| p.contains(&a.article_id)));
    }
}

#[test]
fn empty_pool_is_the_only_failure() {
    let e = engine(NewsPool::from_articles(vec![]).unwrap(), sync_config(), Arc::new(ManualClock::new(0)));
    assert!(matches!(e.fast_track(&cold_ctx("u", "q", &[])), Err(sidground_core::Error::EmptyPool)));
}
