use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sidground_core::codebook::{read_corpus, train_codebook, Codebook, Embedding, TrainParams};
use sidground_core::dualtrack::{percentile, Engine, PrefixCache, ServeConfig, ServedFrom, Snapshot};
use sidground_core::eval::fixture::{make_synthetic_fixture, mock_replay, FixtureSpec};
use sidground_core::eval::report::{run_eval, EvalConfig};
use sidground_core::eval::{build_cases, read_samples, NegativeMode};
use sidground_core::generator::{self, write_replay, Generator, GeneratorSpec, RandomGenerator};
use sidground_core::matcher::{fuzzy_match, grid_search_delta};
use sidground_core::padr::{preset_query, read_histories, read_profiles, route, BehaviorHistory, UserContext, UserProfile};
use sidground_core::pool::{read_articles_file, temporal_split, Article, NewsPool, PrefixIndex};
use sidground_core::ranking::{rank, InterestProfile};
use sidground_core::{jsonl, Sid, SidPrefix};

use crate::server::{router, AppState};
use crate::{BenchArgs, CodebookCmd, Command, Config, EvalCmd, EvalRunArgs, Failure, GenCmd, MatchArgs, PadrCmd, PoolCmd, RankArgs, ServeArgs};

type Res = Result<(), Failure>;

pub fn dispatch(command: Command, cfg: &Config) -> Res {
    match command {
        Command::Codebook(c) => codebook(c, cfg),
        Command::Pool(c) => pool(c, cfg),
        Command::Match(a) => match_cmd(a, cfg),
        Command::Padr(c) => padr(c, cfg),
        Command::Gen(c) => gen(c, cfg),
        Command::Rank(a) => rank_cmd(a, cfg),
        Command::Serve(a) => serve(a, cfg),
        Command::Bench(a) => bench(a, cfg),
        Command::Eval(EvalCmd::Run(a)) => eval_run(a, cfg),
        Command::Eval(EvalCmd::Fixture { spec, out, replay_skill }) => eval_fixture(spec, out, replay_skill, cfg),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Res {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Res {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_prefix(s: &str) -> Result<SidPrefix, Failure> {
    let codes: Vec<i64> = s
        .split(',')
        .map(|c| c.trim().parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("prefix `{s}` is not s1,s2,s3")))?;
    SidPrefix::from_codes(&codes).map_err(|e| usage(format!("prefix `{s}`: {e}")))
}

fn parse_prefixes(raw: &[String]) -> Result<Vec<SidPrefix>, Failure> {
    raw.iter().map(|s| parse_prefix(s)).collect()
}

/// A single JSON document, or a JSONL file from which `user` (or the only
/// record) is picked.
fn read_one<T: DeserializeOwned>(path: &Path, user: Option<&str>, id: impl Fn(&T) -> &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if let Ok(one) = serde_json::from_str::<T>(&text) {
        return match user {
            Some(u) if id(&one) != u => Err(Failure::Data(format!("{} holds `{}`, not `{u}`", path.display(), id(&one)))),
            _ => Ok(one),
        };
    }
    let mut all: Vec<T> = jsonl::read(path)?;
    match user {
        Some(u) => {
            let pos = all
                .iter()
                .position(|r| id(r) == u)
                .ok_or_else(|| Failure::Data(format!("no record for `{u}` in {}", path.display())))?;
            Ok(all.swap_remove(pos))
        }
        None if all.len() == 1 => Ok(all.pop().unwrap()),
        None => Err(usage(format!("{} has {} records; pick one with --user", path.display(), all.len()))),
    }
}

fn load_context(cfg: &Config, profile: &Path, history: Option<&PathBuf>, user: Option<&str>) -> Result<(UserProfile, BehaviorHistory), Failure> {
    let profile: UserProfile = read_one(&cfg.path(profile), user, |p: &UserProfile| &p.user_id)?;
    let history = match history {
        Some(h) => read_one(&cfg.path(h), Some(&profile.user_id), |h: &BehaviorHistory| &h.user_id)?,
        None => BehaviorHistory::empty(&profile.user_id),
    };
    Ok((profile, history))
}

fn corpus(cfg: &Config, path: &Path) -> Result<(Vec<String>, Vec<Embedding>), Failure> {
    Ok(read_corpus(cfg.path(path))?.into_iter().map(|r| (r.id, r.embedding)).unzip())
}

fn codebook(cmd: CodebookCmd, cfg: &Config) -> Res {
    match cmd {
        CodebookCmd::Train { corpus: path, layers, seed, max_iters, out } => {
            let (_, embeddings) = corpus(cfg, &path)?;
            let layer_sizes = match layers {
                Some(l) => <[usize; 4]>::try_from(l.as_slice())
                    .map_err(|_| usage(format!("--layers needs 4 sizes, got {}", l.len())))?,
                None => cfg.layer_sizes,
            };
            let params = TrainParams {
                layer_sizes,
                seed: seed.unwrap_or(cfg.seed),
                max_iters,
            };
            let book = train_codebook(&embeddings, &params)?;
            book.save(cfg.path(&out))?;
            stats(&book, &embeddings)
        }
        CodebookCmd::Assign { codebook, corpus: path, out } => {
            let book = Codebook::load(cfg.path(&codebook))?;
            let (ids, embeddings) = corpus(cfg, &path)?;
            let sids = book.assign_all(&embeddings)?;
            #[derive(Serialize)]
            struct Assigned<'a> {
                id: &'a str,
                sid: Sid,
            }
            jsonl::write(cfg.path(&out), ids.iter().zip(&sids).map(|(id, &sid)| Assigned { id, sid }).collect::<Vec<_>>().iter())?;
            eprintln!("assigned {} SIDs", sids.len());
            Ok(())
        }
        CodebookCmd::Stats { codebook, corpus: path } => {
            let book = Codebook::load(cfg.path(&codebook))?;
            let (_, embeddings) = corpus(cfg, &path)?;
            stats(&book, &embeddings)
        }
    }
}

fn stats(book: &Codebook, embeddings: &[Embedding]) -> Res {
    #[derive(Serialize)]
    struct Stats {
        dim: usize,
        layer_sizes: [usize; 4],
        seed: u64,
        embeddings: usize,
        occupancy: [f64; 4],
        reconstruction_error: [f64; 4],
    }
    print_json(&Stats {
        dim: book.dim(),
        layer_sizes: book.layer_sizes(),
        seed: book.seed(),
        embeddings: embeddings.len(),
        occupancy: book.occupancy(embeddings)?,
        reconstruction_error: book.reconstruction_error(embeddings)?,
    })
}

#[derive(Serialize)]
struct PoolSummary {
    version: u64,
    articles: usize,
    as_of: i64,
}

fn summary(pool: &NewsPool) -> PoolSummary {
    PoolSummary {
        version: pool.version(),
        articles: pool.len(),
        as_of: pool.as_of(),
    }
}

fn parse_cutoff(s: &str) -> Result<i64, Failure> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
        .map_err(|_| usage(format!("cutoff `{s}` is neither RFC 3339 nor YYYY-MM-DD")))
}

fn pool(cmd: PoolCmd, cfg: &Config) -> Res {
    match cmd {
        PoolCmd::Ingest { input, out } => {
            let pool = NewsPool::ingest(cfg.path(&input))?;
            pool.save(cfg.path(&out))?;
            print_json(&summary(&pool))
        }
        PoolCmd::Refresh { base, add, remove, out } => {
            let base = NewsPool::open(cfg.path(&base))?;
            let add = match add {
                Some(p) => read_articles_file(cfg.path(&p))?,
                None => vec![],
            };
            let remove: Vec<String> = match remove {
                Some(p) => std::fs::read_to_string(cfg.path(&p))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                None => vec![],
            };
            let refreshed = base.refresh(add, &remove)?;
            for id in &refreshed.missing_removals {
                log::warn!("remove: `{id}` is not in the base pool");
            }
            refreshed.pool.save(cfg.path(&out))?;
            print_json(&summary(&refreshed.pool))
        }
        PoolCmd::Split { input, cutoff, out_dir } => {
            let cutoff = parse_cutoff(&cutoff)?;
            let articles = read_articles_file(cfg.path(&input))?;
            let (train, test) = temporal_split(&articles, cutoff);
            let dir = cfg.path(&out_dir);
            std::fs::create_dir_all(&dir)?;
            jsonl::write(dir.join("train.jsonl"), &train)?;
            jsonl::write(dir.join("test.jsonl"), &test)?;
            print_json(&serde_json::json!({ "cutoff": cutoff, "train": train.len(), "test": test.len() }))
        }
    }
}

fn match_cmd(a: MatchArgs, cfg: &Config) -> Res {
    let prefixes = parse_prefixes(&a.prefix)?;
    let index = PrefixIndex::build(Arc::new(NewsPool::open(cfg.path(&a.index))?));
    if let Some(deltas) = a.deltas {
        return print_json(&grid_search_delta(&prefixes, &deltas, &index)?);
    }
    let (delta, k) = (a.delta.unwrap_or(cfg.delta), a.k.unwrap_or(cfg.k));
    #[derive(Serialize)]
    struct Matched {
        prefix: SidPrefix,
        results: Vec<sidground_core::matcher::MatchResult>,
    }
    let out: Vec<Matched> = prefixes
        .into_iter()
        .map(|prefix| Matched {
            prefix,
            results: fuzzy_match(&prefix, &index, delta, k),
        })
        .collect();
    print_json(&out)
}

fn padr(cmd: PadrCmd, cfg: &Config) -> Res {
    let PadrCmd::Route { profile, history, user, query, tau, json } = cmd;
    let (profile, history) = load_context(cfg, &profile, history.as_ref(), user.as_deref())?;
    let ctx = route(&profile, &history, &query, tau.unwrap_or(cfg.tau));
    if json {
        return print_json(&ctx);
    }
    emit(&format!("path: {:?}\n{}\n", ctx.path, ctx.rendered))
}

/// `sampled` draws prefixes from the pool's own distribution; anything else
/// goes through [`GeneratorSpec`].
fn build_generator(spec: &str, train: Option<&[Article]>, pool: Option<&NewsPool>, seed: u64, k: usize) -> Result<Arc<dyn Generator>, Failure> {
    if spec == "sampled" {
        let pool = pool.ok_or_else(|| usage("the sampled generator needs a pool"))?;
        let prefixes = pool.articles().iter().map(|a| a.sid.prefix()).collect();
        return Ok(Arc::new(RandomGenerator::sampled_from(seed, k, prefixes)?));
    }
    let parsed: GeneratorSpec = spec.parse().map_err(|e: sidground_core::Error| usage(e.to_string()))?;
    if matches!(parsed, GeneratorSpec::Popular | GeneratorSpec::Profile) && train.is_none() {
        return Err(usage(format!("generator `{spec}` needs --train")));
    }
    Ok(parsed.build(train.unwrap_or(&[]), seed, k)?)
}

fn read_train(cfg: &Config, train: Option<&PathBuf>) -> Result<Option<Vec<Article>>, Failure> {
    train.map(|p| read_articles_file(cfg.path(p)).map_err(Failure::from)).transpose()
}

fn gen(cmd: GenCmd, cfg: &Config) -> Res {
    let GenCmd::Run { generator: spec, context, seed, train, k } = cmd;
    let ctx: UserContext = serde_json::from_str(&std::fs::read_to_string(cfg.path(&context))?)?;
    let train = read_train(cfg, train.as_ref())?;
    let k = k.unwrap_or(generator::DEFAULT_PREFIXES);
    let g = build_generator(&spec, train.as_deref(), None, seed.unwrap_or(cfg.seed), k)?;
    print_json(&generator::run(g.as_ref(), &ctx, k)?)
}

fn rank_cmd(a: RankArgs, cfg: &Config) -> Res {
    let prefixes = parse_prefixes(&a.prefix)?;
    let (profile, history) = load_context(cfg, &a.profile, a.history.as_ref(), a.user.as_deref())?;
    let index = PrefixIndex::build(Arc::new(NewsPool::open(cfg.path(&a.index))?));
    let (delta, k, lambda) = (a.delta.unwrap_or(cfg.delta), a.k.unwrap_or(cfg.k), a.lambda.unwrap_or(cfg.lambda));
    let mut best: HashMap<String, sidground_core::matcher::MatchResult> = HashMap::new();
    for p in &prefixes {
        for m in fuzzy_match(p, &index, delta, usize::MAX) {
            match best.get(&m.article_id) {
                Some(b) if b.score >= m.score => {}
                _ => {
                    best.insert(m.article_id.clone(), m);
                }
            }
        }
    }
    let candidates: Vec<_> = best.into_values().collect();
    let interests = InterestProfile::new(&profile, &history);
    let mut ranked = rank(&candidates, index.pool(), &interests, a.now.unwrap_or_else(now), lambda)?;
    ranked.truncate(k);
    print_json(&ranked)
}

fn click_counts(histories: &[BehaviorHistory]) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for c in histories.iter().flat_map(|h| &h.clicks) {
        *counts.entry(c.article_id.clone()).or_insert(0) += 1;
    }
    counts
}

fn serve_config(cfg: &Config, ttl: Option<i64>, workers: usize) -> ServeConfig {
    ServeConfig {
        delta: cfg.delta,
        broadened_delta: cfg.broadened_delta.max(cfg.delta),
        k: cfg.k,
        lambda: cfg.lambda,
        ttl_seconds: ttl.unwrap_or(cfg.ttl_seconds),
        enhance_workers: workers,
        ..Default::default()
    }
}

fn serve(a: ServeArgs, cfg: &Config) -> Res {
    let pool = NewsPool::open(cfg.path(&a.pool))?;
    let profiles = match &a.profiles {
        Some(p) => read_profiles(cfg.path(p))?,
        None => vec![],
    };
    let histories = match &a.histories {
        Some(p) => read_histories(cfg.path(p))?,
        None => vec![],
    };
    let train = read_train(cfg, a.train.as_ref())?;
    let generator = build_generator(&a.generator, train.as_deref(), Some(&pool), cfg.seed, generator::DEFAULT_PREFIXES)?;
    let cache = Arc::new(match &a.cache_log {
        Some(p) => PrefixCache::with_log(cfg.path(p))?,
        None => PrefixCache::new(),
    });
    let clicks = (!histories.is_empty()).then(|| Arc::new(click_counts(&histories)));
    let config = serve_config(cfg, a.ttl, a.workers);
    let engine = Engine::new(Snapshot::new(Arc::new(pool), clicks), cache, config)?.with_generator(generator);
    if a.warm {
        eprintln!("warmed {} cache entries", engine.warm_cache(&profiles)?);
    }
    let state = Arc::new(AppState {
        engine,
        profiles: profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect(),
        histories: histories.into_iter().map(|h| (h.user_id.clone(), h)).collect(),
        tau: cfg.tau,
    });
    let port = a.port.unwrap_or(cfg.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn bench(a: BenchArgs, cfg: &Config) -> Res {
    if a.concurrency == 0 || a.requests == 0 {
        return Err(usage("--requests and --concurrency must be positive"));
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let pool = NewsPool::open(cfg.path(&a.pool))?;
    let contexts: Vec<UserContext> = match &a.profiles {
        Some(p) => {
            let histories: HashMap<String, BehaviorHistory> = match &a.histories {
                Some(h) => read_histories(cfg.path(h))?.into_iter().map(|h| (h.user_id.clone(), h)).collect(),
                None => HashMap::new(),
            };
            read_profiles(cfg.path(p))?
                .iter()
                .map(|p| {
                    let h = histories.get(&p.user_id).cloned().unwrap_or_else(|| BehaviorHistory::empty(&p.user_id));
                    let query = p.declared_interests.first().map(|c| preset_query(c)).unwrap_or_default();
                    route(p, &h, &query, cfg.tau)
                })
                .collect()
        }
        None => (0..a.users.max(1))
            .map(|i| {
                let id = format!("anon{i}");
                let profile = UserProfile {
                    user_id: id.clone(),
                    ..Default::default()
                };
                route(&profile, &BehaviorHistory::empty(&id), &format!("request {i}"), cfg.tau)
            })
            .collect(),
    };
    if contexts.is_empty() {
        return Err(Failure::Data("no profiles to benchmark".into()));
    }
    let train = read_train(cfg, a.train.as_ref())?;
    let generator = build_generator(&a.generator, train.as_deref(), Some(&pool), seed, generator::DEFAULT_PREFIXES)?;
    let engine = Engine::new(Snapshot::new(Arc::new(pool), None), Arc::new(PrefixCache::new()), serve_config(cfg, None, 0))?
        .with_generator(generator);
    let warm_start = Instant::now();
    for ctx in &contexts {
        engine.enhance(ctx)?;
    }
    let warm_secs = warm_start.elapsed().as_secs_f64();

    let per = |t: usize| a.requests / a.concurrency + usize::from(t < a.requests % a.concurrency);
    let start = Instant::now();
    let results: Vec<Result<Vec<(f64, ServedFrom)>, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..a.concurrency)
            .map(|t| {
                let (engine, contexts) = (&engine, &contexts);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(t as u64);
                    (0..per(t))
                        .map(|_| {
                            let r = engine.fast_track(&contexts[rng.gen_range(0..contexts.len())])?;
                            Ok((r.latency_breakdown.total_ms, r.served_from))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let mut latencies = Vec::with_capacity(a.requests);
    let mut served: HashMap<ServedFrom, usize> = HashMap::new();
    for r in results {
        for (ms, from) in r? {
            latencies.push(ms);
            *served.entry(from).or_default() += 1;
        }
    }
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    print_json(&serde_json::json!({
        "pool_articles": engine.snapshot().pool().len(),
        "contexts": contexts.len(),
        "requests": latencies.len(),
        "concurrency": a.concurrency,
        "warm_seconds": warm_secs,
        "wall_seconds": wall,
        "throughput_rps": latencies.len() as f64 / wall,
        "latency_ms": { "mean": mean, "p50": percentile(&latencies, 0.5), "p95": percentile(&latencies, 0.95), "p99": percentile(&latencies, 0.99) },
        "served_from": served,
    }))
}

fn eval_run(a: EvalRunArgs, cfg: &Config) -> Res {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        explicit
            .as_ref()
            .map(|p| cfg.path(p))
            .or_else(|| a.fixture.as_ref().map(|d| cfg.path(d).join(name)))
    };
    let need = |explicit: &Option<PathBuf>, name: &str, flag: &str| {
        pick(explicit, name).ok_or_else(|| usage(format!("--{flag} or --fixture is required")))
    };
    let samples = read_samples(need(&a.samples, "samples.jsonl", "samples")?)?;
    let pool = NewsPool::open(need(&a.pool, "pool.jsonl", "pool")?)?;
    let profiles = read_profiles(need(&a.profiles, "profiles.jsonl", "profiles")?)?;
    let histories = read_histories(need(&a.histories, "histories.jsonl", "histories")?)?;
    let train = match pick(&a.train, "train.jsonl") {
        Some(p) if p.exists() || a.train.is_some() => Some(read_articles_file(p)?),
        _ => None,
    };
    let hit_modes = a
        .hit_modes
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| m.parse::<NegativeMode>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let config = EvalConfig {
        delta: a.delta.unwrap_or(cfg.delta),
        seed: a.seed.unwrap_or(cfg.seed),
        resamples: a.resamples.unwrap_or(cfg.resamples),
        tau: a.tau.unwrap_or(cfg.tau),
        hit_modes,
    };
    let generators = a
        .generator
        .iter()
        .map(|spec| {
            let spec_path = match spec.strip_prefix("replay:") {
                Some(p) => format!("replay:{}", cfg.path(Path::new(p)).display()),
                None => spec.clone(),
            };
            Ok((spec.clone(), build_generator(&spec_path, train.as_deref(), Some(&pool), config.seed, generator::DEFAULT_PREFIXES)?))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let cases = build_cases(&samples, &profiles, &histories, config.tau)?;
    let index = PrefixIndex::build(Arc::new(pool));
    let report = run_eval(&cases, &index, &generators, &config)?;
    let text = report.to_text();
    if let Some(out) = &a.out {
        let out = cfg.path(out);
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(out.join("report.txt"), &text)?;
    }
    emit(&text)
}

fn eval_fixture(spec: Option<PathBuf>, out: PathBuf, skill: f64, cfg: &Config) -> Res {
    let spec: FixtureSpec = match spec {
        Some(p) => {
            let p = cfg.path(&p);
            let text = std::fs::read_to_string(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            if p.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
            } else {
                serde_json::from_str(&text)?
            }
        }
        None => FixtureSpec {
            seed: cfg.seed,
            ..Default::default()
        },
    };
    let fixture = make_synthetic_fixture(&spec)?;
    let out = cfg.path(&out);
    fixture.write(&out)?;
    write_replay(out.join("mock_replay.jsonl"), &mock_replay(&fixture, skill, spec.seed)?)?;
    print_json(&serde_json::json!({
        "out": out,
        "articles": fixture.articles.len(),
        "train": fixture.train.len(),
        "pool": fixture.pool.len(),
        "users": fixture.profiles.len(),
        "samples": fixture.samples.len(),
    }))
}
