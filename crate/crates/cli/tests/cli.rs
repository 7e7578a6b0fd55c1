use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_sidground");

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/standard")
}

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .env_remove("SIDGROUND_PORT")
        .env_remove("SIDGROUND_DATA_DIR")
        .env_remove("SIDGROUND_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_at_every_level_exits_zero() {
    for args in [
        vec!["--help"],
        vec!["codebook", "--help"],
        vec!["codebook", "train", "--help"],
        vec!["pool", "split", "--help"],
        vec!["match", "--help"],
        vec!["padr", "route", "--help"],
        vec!["gen", "run", "--help"],
        vec!["serve", "--help"],
        vec!["eval", "fixture", "--help"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["match", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["evl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval"), "suggests the close match");
    let pool = shipped().join("pool.jsonl");
    let out = run(&["match", "--index", s(&pool), "--prefix", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["match", "--index", s(&pool), "--prefix", "99,0,0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_env(&["match", "--index", s(&pool), "--prefix", "1,2,3"], &[("SIDGROUND_SEED", "x")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pool", "ingest", "--in", "/nonexistent.jsonl", "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"title\":\"t\",\"category\":\"c\",\"published_at\":5,\"sid\":[1,2,300,0]}\n").unwrap();
    let out = run(&["pool", "ingest", "--in", s(&bad), "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s3"));
}

/// One article at s3 = 10 and a prefix at distance 3: delta 0 finds
/// nothing, delta >= 3 finds it.
#[test]
fn config_precedence_per_knob() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.jsonl");
    std::fs::write(&pool, "{\"id\":\"a\",\"title\":\"t\",\"category\":\"c\",\"published_at\":5,\"sid\":[1,2,10,0]}\n").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "delta = 0\nseed = 5\n").unwrap();
    let found = |v: &serde_json::Value| v[0]["results"].as_array().unwrap().len();
    let base = ["match", "--index", s(&pool), "--prefix", "1,2,13"];

    assert_eq!(found(&json(&run(&base))), 1, "default delta 5");
    let mut with_cfg = base.to_vec();
    with_cfg.extend(["--config", s(&cfg)]);
    assert_eq!(found(&json(&run(&with_cfg))), 0, "file delta 0");
    with_cfg.extend(["--delta", "3"]);
    assert_eq!(found(&json(&run(&with_cfg))), 1, "flag beats file");

    // Seed: flag > env > file.
    let ctx = dir.path().join("ctx.json");
    let profile = dir.path().join("p.json");
    std::fs::write(&profile, "{\"user_id\":\"u\"}").unwrap();
    std::fs::write(&ctx, ok(&run(&["padr", "route", "--profile", s(&profile), "--json"]))).unwrap();
    let gen = |extra: &[&str], env: &[(&str, &str)]| {
        let mut args = vec!["gen", "run", "--generator", "random", "--context", s(&ctx), "--config", s(&cfg)];
        args.extend(extra);
        json(&run_env(&args, env))["prefixes"].clone()
    };
    let seeded = |n: &str| gen(&["--seed", n], &[]);
    assert_eq!(gen(&[], &[]), seeded("5"), "file seed");
    assert_eq!(gen(&[], &[("SIDGROUND_SEED", "9")]), seeded("9"), "env beats file");
    assert_eq!(gen(&["--seed", "11"], &[("SIDGROUND_SEED", "9")]), seeded("11"), "flag beats env");
    assert_ne!(seeded("5"), seeded("9"));

    // Data dir resolves relative paths.
    let out = run_env(&["match", "--index", "pool.jsonl", "--prefix", "1,2,10"], &[("SIDGROUND_DATA_DIR", s(dir.path()))]);
    assert_eq!(found(&json(&out)), 1);
}

#[test]
fn route_generate_rank() {
    let f = shipped();
    let out = ok(&run(&[
        "padr", "route", "--profile", s(&f.join("profiles.jsonl")), "--history", s(&f.join("histories.jsonl")),
        "--user", "u000080", "--query", "anything new?",
    ]));
    assert!(out.starts_with("path: "));
    assert!(out.contains("anything new?"));

    let dir = tempfile::tempdir().unwrap();
    let ctx = dir.path().join("ctx.json");
    let routed = run(&[
        "padr", "route", "--profile", s(&f.join("profiles.jsonl")), "--history", s(&f.join("histories.jsonl")),
        "--user", "u000080", "--json",
    ]);
    std::fs::write(&ctx, ok(&routed)).unwrap();
    for g in ["histpop", "random"] {
        let v = json(&run(&["gen", "run", "--generator", g, "--context", s(&ctx)]));
        assert!(!v["prefixes"].as_array().unwrap().is_empty(), "{g}");
    }
    let out = run(&["gen", "run", "--generator", "popular", "--context", s(&ctx)]);
    assert_eq!(out.status.code(), Some(1), "popular needs --train");
    let v = json(&run(&["gen", "run", "--generator", "popular", "--context", s(&ctx), "--train", s(&f.join("train.jsonl"))]));
    assert_eq!(v["prefixes"].as_array().unwrap().len(), 10);

    let pool: Vec<serde_json::Value> = std::fs::read_to_string(f.join("pool.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let sid = &pool[0]["sid"];
    let prefix = format!("{},{},{}", sid[0], sid[1], sid[2]);
    let ranked = json(&run(&[
        "rank", "--index", s(&f.join("pool.jsonl")), "--profile", s(&f.join("profiles.jsonl")), "--user", "u000080",
        "--prefix", &prefix, "--k", "3", "--now", "1800000000",
    ]));
    let ranked = ranked.as_array().unwrap();
    assert!(!ranked.is_empty() && ranked.len() <= 3);
    let scores: Vec<f64> = ranked.iter().map(|r| r["final_score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn pool_split_refresh_and_grid() {
    let f = shipped();
    let dir = tempfile::tempdir().unwrap();
    let v = json(&run(&["pool", "split", "--in", s(&f.join("articles.jsonl")), "--cutoff", "2023-11-20", "--out-dir", s(dir.path())]));
    assert_eq!(v["train"].as_u64().unwrap() + v["test"].as_u64().unwrap(), 2000);
    let v2 = json(&run(&["pool", "split", "--in", s(&f.join("articles.jsonl")), "--cutoff", "2023-11-20T00:00:00Z", "--out-dir", s(dir.path())]));
    assert_eq!(v, v2);
    assert_eq!(run(&["pool", "split", "--in", s(&f.join("articles.jsonl")), "--cutoff", "soon"]).status.code(), Some(1));

    let snap = dir.path().join("pool.json");
    let v = json(&run(&["pool", "ingest", "--in", s(&dir.path().join("test.jsonl")), "--out", s(&snap)]));
    assert_eq!(v["version"], 1);
    let removals = dir.path().join("remove.txt");
    let first = std::fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
    let id: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    std::fs::write(&removals, format!("{}\nnot-there\n", id["id"].as_str().unwrap())).unwrap();
    let next = dir.path().join("pool2.json");
    let after = json(&run(&["pool", "refresh", "--base", s(&snap), "--remove", s(&removals), "--out", s(&next)]));
    assert_eq!(after["version"], 2);
    assert_eq!(after["articles"].as_u64().unwrap() + 1, v["articles"].as_u64().unwrap());

    let grid = json(&run(&["match", "--index", s(&next), "--prefix", "1,2,3", "--prefix", "4,5,6", "--deltas", "1,5,10"]));
    let rows = grid.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["delta"], 1);
}

#[test]
fn codebook_train_assign_stats() {
    let f = shipped();
    let dir = tempfile::tempdir().unwrap();
    let book = dir.path().join("book.json");
    let v = json(&run(&[
        "codebook", "train", "--corpus", s(&f.join("embeddings.jsonl")), "--layers", "8,8,8,8", "--seed", "3", "--out", s(&book),
    ]));
    assert_eq!(v["layer_sizes"], serde_json::json!([8, 8, 8, 8]));
    let stats = json(&run(&["codebook", "stats", "--codebook", s(&book), "--corpus", s(&f.join("embeddings.jsonl"))]));
    assert_eq!(stats["occupancy"], v["occupancy"]);
    let sids = dir.path().join("sids.jsonl");
    ok(&run(&["codebook", "assign", "--codebook", s(&book), "--corpus", s(&f.join("embeddings.jsonl")), "--out", s(&sids)]));
    assert_eq!(std::fs::read_to_string(&sids).unwrap().lines().count(), 2000);
}

#[test]
fn bench_reports_percentiles() {
    let f = shipped();
    let v = json(&run(&[
        "bench", "--pool", s(&f.join("pool.jsonl")), "--requests", "2000", "--concurrency", "4",
        "--profiles", s(&f.join("profiles.jsonl")), "--histories", s(&f.join("histories.jsonl")),
    ]));
    assert_eq!(v["requests"], 2000);
    let (p50, p95) = (v["latency_ms"]["p50"].as_f64().unwrap(), v["latency_ms"]["p95"].as_f64().unwrap());
    assert!(0.0 < p50 && p50 <= p95);
}

/// fixture -> codebook -> pool -> eval with histpop on 5,000 articles.
#[test]
fn smoke_pipeline_on_5k_fixture() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.toml");
    std::fs::write(&spec, "articles = 5000\nusers = 500\nsamples = 1500\nembedding_dim = 32\n").unwrap();
    let fx = d.join("fx");
    let v = json(&run(&["eval", "fixture", "--spec", s(&spec), "--out", s(&fx)]));
    assert_eq!(v["articles"], 5000);

    let book = d.join("book.json");
    let trained = json(&run(&["codebook", "train", "--corpus", s(&fx.join("embeddings.jsonl")), "--out", s(&book)]));
    assert!(trained["occupancy"][0].as_f64().unwrap() >= 0.9);

    let snap = d.join("pool.json");
    ok(&run(&["pool", "ingest", "--in", s(&fx.join("pool.jsonl")), "--out", s(&snap)]));

    let report = d.join("report");
    let text = ok(&run(&[
        "eval", "run", "--fixture", s(&fx), "--pool", s(&snap), "--generator", "histpop", "--generator",
        &format!("replay:{}", s(&fx.join("mock_replay.jsonl"))), "--resamples", "2000", "--out", s(&report),
    ]));
    assert!(text.contains("Overall") && text.contains("By task"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["generators"].as_array().unwrap().len(), 2);
    assert_eq!(json["n_samples"], 1500);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "smoke pipeline took {secs:.1}s");
}
