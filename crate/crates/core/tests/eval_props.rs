mod common;

use std::collections::HashSet;

use common::{arb_pool, arb_prefix, arb_sid, index_of};
use proptest::prelude::*;
use sidground_core::eval::stats::{bootstrap_ci, cohens_d, paired_bootstrap_p};
use sidground_core::eval::{hallucination_rate, match_rates, partial_match_analysis};
use sidground_core::matcher::count_matches;
use sidground_core::generator::{Generator, RandomGenerator};
use sidground_core::padr::{route, BehaviorHistory, UserProfile};
use sidground_core::SidPrefix;

/// Direct pooled-variance formula.
fn d_oracle(a: &[f64], b: &[f64]) -> f64 {
    let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64], mu: f64| x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
    let (ma, mb) = (m(a), m(b));
    let pooled = ((ss(a, ma) + ss(b, mb)) / (a.len() + b.len() - 2) as f64).sqrt();
    (ma - mb) / pooled
}

proptest! {
    #[test]
    fn cohens_d_matches_formula(a in prop::collection::vec(-10.0f64..10.0, 2..60), b in prop::collection::vec(-10.0f64..10.0, 2..60)) {
        let want = d_oracle(&a, &b);
        prop_assume!(want.is_finite());
        let got = cohens_d(&a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_the_mean(v in prop::collection::vec(0.0f64..1.0, 1..200), seed in any::<u64>()) {
        let a = bootstrap_ci(&v, 500, seed).unwrap();
        prop_assert_eq!(a, bootstrap_ci(&v, 500, seed).unwrap());
        prop_assert!(a.lo <= a.point && a.point <= a.hi);
        let p = paired_bootstrap_p(&v, &v, 500, seed).unwrap();
        prop_assert_eq!(p, 1.0);
    }

    #[test]
    fn l2_never_exceeds_l1(pool in arb_pool(150), preds in prop::collection::vec(prop::option::of(arb_prefix()), 1..50)) {
        let index = index_of(pool.clone());
        let targets: Vec<_> = preds.iter().enumerate().map(|(i, _)| {
            let a = &pool[i % pool.len()];
            (a.sid, a.category.clone())
        }).collect();
        let r = match_rates(&preds, &targets, &index, 5).unwrap();
        prop_assert!(r.l2 <= r.l1);
    }

    #[test]
    fn hallucination_is_one_minus_occupied_share(pool in arb_pool(200), seed in any::<u64>()) {
        let index = index_of(pool.clone());
        let occupied: HashSet<SidPrefix> = pool.iter().map(|a| a.sid.prefix()).collect();
        let g = RandomGenerator::uniform(seed, 10);
        let mut raw = Vec::new();
        for i in 0..50 {
            let u = format!("u{i}");
            let ctx = route(&UserProfile { user_id: u.clone(), ..Default::default() }, &BehaviorHistory::empty(&u), "q", 10);
            raw.extend(g.generate(&ctx).unwrap().prefixes);
        }
        let absent = raw.iter().filter(|p| !occupied.contains(p)).count();
        prop_assert!((hallucination_rate(&raw, &index) - absent as f64 / raw.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn partial_match_counts_are_recounts(pool in arb_pool(200), targets in prop::collection::vec(arb_sid(), 1..40), preds in prop::collection::vec(arb_prefix(), 40)) {
        let index = index_of(pool.clone());
        let preds: Vec<Option<SidPrefix>> = preds.into_iter().take(targets.len()).map(Some).collect();
        let labeled: Vec<_> = targets.iter().map(|s| (*s, "tech".to_string())).collect();
        let got = partial_match_analysis(&preds, &labeled, &index, 5).unwrap();
        let mut counts = Vec::new();
        for (p, t) in preds.iter().zip(&targets) {
            let p = p.unwrap();
            if p.s1 == t.s1 && p.s2 != t.s2 {
                let n = pool.iter().filter(|a| a.sid.s1 == p.s1 && a.sid.s2 == p.s2 && a.sid.s3.abs_diff(p.s3) <= 5).count();
                prop_assert_eq!(n, count_matches(&p, &index, 5));
                counts.push(n);
            }
        }
        prop_assert_eq!(got.l1_only, counts.len());
        let mean = if counts.is_empty() { 0.0 } else { counts.iter().sum::<usize>() as f64 / counts.len() as f64 };
        prop_assert!((got.mean_candidates - mean).abs() < 1e-9);
    }
}
