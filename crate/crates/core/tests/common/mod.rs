#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use sidground_core::pool::{Article, NewsPool, PrefixIndex};
use sidground_core::{Sid, SidPrefix};

pub fn article(id: impl Into<String>, sid: Sid, category: &str, published_at: i64) -> Article {
    Article {
        id: id.into(),
        title: String::new(),
        category: category.to_string(),
        tags: vec![],
        published_at,
        sid,
    }
}

pub fn index_of(articles: Vec<Article>) -> PrefixIndex {
    PrefixIndex::build(Arc::new(NewsPool::from_articles(articles).unwrap()))
}

/// Codes concentrated on a 3x3 block of buckets so that strategies hit
/// populated buckets most of the time.
pub fn arb_sid() -> impl Strategy<Value = Sid> {
    (0u16..3, 0u16..3, 0u16..128, 0u16..1024).prop_map(|(s1, s2, s3, s4)| Sid { s1, s2, s3, s4 })
}

pub fn arb_prefix() -> impl Strategy<Value = SidPrefix> {
    (0u16..3, 0u16..3, 0u16..128).prop_map(|(s1, s2, s3)| SidPrefix { s1, s2, s3 })
}

/// Pools of up to `max` articles with unique ids and frequent timestamp ties.
pub fn arb_pool(max: usize) -> impl Strategy<Value = Vec<Article>> {
    prop::collection::vec((arb_sid(), 1i64..20, 0usize..4), 1..=max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (sid, t, c))| article(format!("a{i:04}"), sid, ["tech", "sports", "arts", "world"][c], t))
            .collect()
    })
}
