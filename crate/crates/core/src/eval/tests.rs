use std::sync::Arc;

use super::fixture::{make_synthetic_fixture, FixtureSpec, IntentWeights};
use super::*;

fn small_spec() -> FixtureSpec {
    FixtureSpec {
        articles: 800,
        users: 60,
        samples: 300,
        embedding_dim: 8,
        ..Default::default()
    }
}

fn sid(s1: i64, s2: i64, s3: i64) -> Sid {
    Sid::new(s1, s2, s3, 0).unwrap()
}

fn art(id: &str, cat: &str, s: Sid) -> Article {
    Article {
        id: id.into(),
        title: id.into(),
        category: cat.into(),
        tags: vec![],
        published_at: 1,
        sid: s,
    }
}

fn index(articles: Vec<Article>) -> PrefixIndex {
    PrefixIndex::build(Arc::new(NewsPool::from_articles(articles).unwrap()))
}

#[test]
fn perfect_predictions_and_length_check() {
    let idx = index(vec![art("a", "tech", sid(1, 2, 3)), art("b", "sports", sid(4, 5, 6))]);
    let targets = vec![(sid(1, 2, 3), "tech".to_string()), (sid(4, 5, 6), "sports".to_string())];
    let preds: Vec<Option<SidPrefix>> = targets.iter().map(|t| Some(t.0.prefix())).collect();
    let r = match_rates(&preds, &targets, &idx, 5).unwrap();
    assert_eq!((r.l1, r.l2, r.category), (1.0, 1.0, 1.0));
    let r = match_rates(&[None, None], &targets, &idx, 5).unwrap();
    assert_eq!((r.l1, r.l2, r.category), (0.0, 0.0, 0.0));
    assert!(match_rates(&preds[..1], &targets, &idx, 5).is_err());
}

#[test]
fn hallucination_counts_exact_prefixes() {
    let idx = index(vec![art("a", "t", sid(1, 2, 3)), art("b", "t", sid(1, 2, 9))]);
    let present = [sid(1, 2, 3).prefix(), sid(1, 2, 9).prefix()];
    assert_eq!(hallucination_rate(&present, &idx), 0.0);
    let absent = [SidPrefix::new(7, 7, 3).unwrap(), SidPrefix::new(7, 8, 9).unwrap()];
    assert_eq!(hallucination_rate(&absent, &idx), 1.0);
    // Near miss: hallucinated at delta 0, grounded at delta 5.
    let near = [SidPrefix::new(1, 2, 5).unwrap()];
    assert_eq!(hallucination_rate(&near, &idx), 1.0);
    assert_eq!(empty_match_rate(&near, &idx, 5), 0.0);
}

#[test]
fn expected_random_matches_pairwise_agreement() {
    let targets: Vec<Sid> = [0, 0, 1, 2, 2, 2, 5].iter().map(|&c| sid(c, 0, 0)).collect();
    let b = expected_random_l1(&targets, 0.5).unwrap();
    // Probability two independent draws (with replacement) agree.
    let n = targets.len();
    let agree = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| targets[i].s1 == targets[j].s1)
        .count() as f64
        / (n * n) as f64;
    assert!((b.expected - agree).abs() < 1e-12);
    assert!((b.adjusted - (0.5 - agree)).abs() < 1e-12);
    let uniform: Vec<Sid> = (0..32).map(|c| sid(c, 0, 0)).collect();
    assert!((expected_random_l1(&uniform, 0.0).unwrap().expected - 1.0 / 32.0).abs() < 1e-15);
    assert!(expected_random_l1(&[], 0.0).is_err());
}

#[test]
fn partial_match_exact_predictions_are_not_partial() {
    let idx = index(vec![art("a", "t", sid(1, 2, 3)), art("b", "u", sid(1, 4, 3))]);
    let targets = vec![(sid(1, 2, 3), "t".to_string())];
    let exact = partial_match_analysis(&[Some(sid(1, 2, 3).prefix())], &targets, &idx, 5).unwrap();
    assert_eq!(exact.l1_only_rate, 0.0);
    let partial = partial_match_analysis(&[Some(SidPrefix::new(1, 4, 4).unwrap())], &targets, &idx, 5).unwrap();
    assert_eq!(partial.l1_only, 1);
    assert_eq!(partial.mean_candidates, 1.0);
    assert_eq!(partial.category_overlap, 0.0);
}

#[test]
fn fixture_is_deterministic_and_grounded() {
    let a = make_synthetic_fixture(&small_spec()).unwrap();
    let b = make_synthetic_fixture(&small_spec()).unwrap();
    assert_eq!(a, b);
    let pool: std::collections::HashMap<&str, &Article> = a.pool.iter().map(|x| (x.id.as_str(), x)).collect();
    for s in &a.samples {
        s.validate().unwrap();
        let t = pool[s.target.article_id.as_str()];
        assert_eq!(t.sid, s.target.sid);
    }
    for p in &a.profiles {
        p.validate().unwrap();
    }
    for h in &a.histories {
        h.validate().unwrap();
    }
    assert!(a.train.iter().all(|x| x.published_at <= a.cutoff));
    assert!(a.pool.iter().all(|x| x.published_at > a.cutoff));
    let intents: std::collections::HashSet<Intent> = a.samples.iter().map(|s| s.intent).collect();
    assert_eq!(intents.len(), 6);
}

#[test]
fn fixture_without_pure_cold_users_has_no_pure_cold_samples() {
    let spec = FixtureSpec {
        pure_coldstart_fraction: 0.0,
        ..small_spec()
    };
    let f = make_synthetic_fixture(&spec).unwrap();
    assert!(f.samples.iter().all(|s| s.intent != Intent::PureColdstart));
    let spec = FixtureSpec {
        intent_weights: IntentWeights::only(Intent::PureColdstart),
        pure_coldstart_fraction: 0.0,
        ..small_spec()
    };
    assert!(matches!(make_synthetic_fixture(&spec), Err(Error::Spec(_))));
}

#[test]
fn inconsistent_specs_are_rejected() {
    for spec in [
        FixtureSpec { categories: 0, ..small_spec() },
        FixtureSpec { concentration: 1.5, ..small_spec() },
        FixtureSpec { articles: 0, ..small_spec() },
        // Too few test articles for candidate sets.
        FixtureSpec { articles: 4, test_fraction: 1.0, users: 5, samples: 5, ..small_spec() },
    ] {
        assert!(matches!(make_synthetic_fixture(&spec), Err(Error::Spec(_))), "{spec:?}");
    }
}

#[test]
fn oracle_and_fixed_hit_at_1() {
    let f = make_synthetic_fixture(&small_spec()).unwrap();
    let pool = NewsPool::from_articles(f.pool.clone()).unwrap();
    let cases = build_cases(&f.samples, &f.profiles, &f.histories, 10).unwrap();
    for mode in [NegativeMode::Rand, NegativeMode::Align, NegativeMode::Fixed] {
        let r = hit_at_1(&cases, &pool, &OracleChooser, mode, 42).unwrap();
        assert!(r.evaluated > 0);
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.skipped, 0);
    }
    let sampler = NegativeSampler::new(&pool);
    let s = cases.iter().find(|c| c.sample.intent == Intent::CandidateSelection).unwrap();
    let x = sampler.candidates(&s.sample, NegativeMode::Align, 9).unwrap();
    let y = sampler.candidates(&s.sample, NegativeMode::Align, 9).unwrap();
    assert_eq!(x, y);
    let distinct: std::collections::HashSet<&String> = x.candidates.iter().collect();
    assert_eq!(distinct.len(), CANDIDATES_PER_SAMPLE);
    assert_eq!(x.candidates[x.target_pos], s.sample.target.article_id);
}

#[test]
fn align_falls_back_when_category_is_thin() {
    let mut arts: Vec<Article> = (0..10).map(|i| art(&format!("x{i}"), "big", sid(1, 1, i))).collect();
    arts.push(art("lonely", "rare", sid(2, 2, 2)));
    let pool = NewsPool::from_articles(arts).unwrap();
    let sample = EvalSample {
        sample_id: "s".into(),
        intent: Intent::CandidateSelection,
        user_id: "u".into(),
        query: String::new(),
        target: Target {
            article_id: "lonely".into(),
            sid: sid(2, 2, 2),
        },
        candidates: Some(vec!["lonely".into(), "x0".into(), "x1".into(), "x2".into(), "x3".into()]),
        history_len: 0,
    };
    let set = NegativeSampler::new(&pool).candidates(&sample, NegativeMode::Align, 1).unwrap();
    assert!(set.align_fallback);
    let tiny = NewsPool::from_articles(vec![art("lonely", "rare", sid(2, 2, 2))]).unwrap();
    assert!(matches!(
        NegativeSampler::new(&tiny).candidates(&sample, NegativeMode::Rand, 1),
        Err(Error::Sampling(_))
    ));
}

#[test]
fn sample_validation() {
    let mut s = EvalSample {
        sample_id: "s".into(),
        intent: Intent::PureColdstart,
        user_id: "u".into(),
        query: String::new(),
        target: Target {
            article_id: "a".into(),
            sid: sid(0, 0, 0),
        },
        candidates: None,
        history_len: 3,
    };
    assert!(s.validate().is_err());
    s.history_len = 0;
    s.validate().unwrap();
    s.intent = Intent::CandidateSelection;
    assert!(s.validate().is_err());
    s.candidates = Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
    assert!(s.validate().is_err());
    s.candidates.as_mut().unwrap().push("e".into());
    s.validate().unwrap();
}
