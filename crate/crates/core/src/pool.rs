//! News pool snapshots, ingestion, temporal splitting and the `(s1, s2)`
//! prefix index.
//!
//! A [`NewsPool`] is never mutated after construction. [`NewsPool::refresh`]
//! builds the next snapshot and leaves the receiver untouched, so readers
//! holding an `Arc<NewsPool>` keep a consistent view.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sid::{Sid, SidPrefix, LAYER_SIZES};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// UTC seconds.
    pub published_at: i64,
    pub sid: Sid,
}

/// Wire shape of an article line, checked field by field so range errors
/// can name the offending layer.
#[derive(Deserialize)]
struct ArticleRecord {
    id: String,
    title: String,
    category: String,
    #[serde(default)]
    tags: Vec<String>,
    published_at: i64,
    sid: Vec<i64>,
}

impl TryFrom<ArticleRecord> for Article {
    type Error = Error;

    fn try_from(r: ArticleRecord) -> Result<Self> {
        if r.published_at <= 0 {
            return Err(Error::InvalidInput(format!(
                "article `{}` has non-positive published_at {}",
                r.id, r.published_at
            )));
        }
        Ok(Article {
            sid: Sid::from_codes(&r.sid)?,
            id: r.id,
            title: r.title,
            category: r.category,
            tags: r.tags,
            published_at: r.published_at,
        })
    }
}

fn check_article(a: &Article) -> Result<()> {
    Sid::new(a.sid.s1 as i64, a.sid.s2 as i64, a.sid.s3 as i64, a.sid.s4 as i64)?;
    if a.published_at <= 0 {
        return Err(Error::InvalidInput(format!(
            "article `{}` has non-positive published_at {}",
            a.id, a.published_at
        )));
    }
    Ok(())
}

/// Read article JSONL, reporting malformed lines and out-of-range SIDs with
/// their line numbers.
pub fn read_articles<R: BufRead>(reader: R) -> Result<Vec<Article>> {
    let mut out = Vec::new();
    crate::jsonl::visit_lines(reader, |_, record: ArticleRecord| {
        out.push(Article::try_from(record)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_articles_file(path: impl AsRef<Path>) -> Result<Vec<Article>> {
    read_articles(BufReader::new(File::open(path)?))
}

#[derive(Clone, Debug)]
pub struct NewsPool {
    articles: Vec<Article>,
    by_id: HashMap<String, usize>,
    version: u64,
    as_of: i64,
}

/// Result of [`NewsPool::refresh`]: the new snapshot plus removal ids that
/// were not present (reported, not fatal).
#[derive(Debug)]
pub struct Refreshed {
    pub pool: NewsPool,
    pub missing_removals: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format_version: u32,
    version: u64,
    as_of: i64,
    articles: Vec<Article>,
}

impl NewsPool {
    /// Build a pool, rejecting duplicate ids and invalid articles.
    pub fn new(articles: Vec<Article>, version: u64, as_of: i64) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            check_article(a)?;
            if by_id.insert(a.id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(a.id.clone()));
            }
        }
        Ok(NewsPool {
            articles,
            by_id,
            version,
            as_of,
        })
    }

    /// A version-1 pool whose `as_of` is the newest publication time.
    pub fn from_articles(articles: Vec<Article>) -> Result<Self> {
        let as_of = articles.iter().map(|a| a.published_at).max().unwrap_or(0);
        NewsPool::new(articles, 1, as_of)
    }

    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        NewsPool::from_articles(read_articles_file(path)?)
    }

    pub fn ingest_reader<R: BufRead>(reader: R) -> Result<Self> {
        NewsPool::from_articles(read_articles(reader)?)
    }

    /// Next snapshot: drop `remove`, append `add`, bump the version.
    pub fn refresh(&self, add: Vec<Article>, remove: &[String]) -> Result<Refreshed> {
        let removing: HashSet<&str> = remove.iter().map(String::as_str).collect();
        let missing_removals: Vec<String> = remove
            .iter()
            .filter(|id| !self.by_id.contains_key(id.as_str()))
            .cloned()
            .collect();
        for id in &missing_removals {
            log::warn!("refresh: cannot remove unknown article `{id}`");
        }

        let mut articles: Vec<Article> = self
            .articles
            .iter()
            .filter(|a| !removing.contains(a.id.as_str()))
            .cloned()
            .collect();
        let as_of = add
            .iter()
            .map(|a| a.published_at)
            .max()
            .map_or(self.as_of, |t| t.max(self.as_of));
        articles.extend(add);
        let pool = NewsPool::new(articles, self.version + 1, as_of)?;
        Ok(Refreshed {
            pool,
            missing_removals,
        })
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn article(&self, idx: usize) -> &Article {
        &self.articles[idx]
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.by_id.get(id).map(|&i| &self.articles[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn as_of(&self) -> i64 {
        self.as_of
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &SnapshotFile {
                format_version: SNAPSHOT_FORMAT_VERSION,
                version: self.version,
                as_of: self.as_of,
                articles: self.articles.clone(),
            },
        )?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: SnapshotFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported snapshot format version {}",
                file.format_version
            )));
        }
        NewsPool::new(file.articles, file.version, file.as_of)
    }

    /// Load either a saved snapshot or a raw article JSONL file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        if first.contains("\"format_version\"") && first.contains("\"articles\"") {
            NewsPool::load(path)
        } else {
            NewsPool::ingest(path)
        }
    }
}

/// Split by publication time. Articles published at or before `cutoff` go
/// to train, strictly after to test.
pub fn temporal_split(corpus: &[Article], cutoff: i64) -> (Vec<Article>, Vec<Article>) {
    corpus
        .iter()
        .cloned()
        .partition(|a| a.published_at <= cutoff)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub s3: u16,
    /// Position of the article in the source pool.
    pub article: u32,
}

/// `(s1, s2)` buckets of `(s3, article)` entries sorted by `s3` then id.
#[derive(Clone, Debug)]
pub struct PrefixIndex {
    pool: Arc<NewsPool>,
    buckets: Vec<Vec<IndexEntry>>,
}

pub const BUCKETS: usize = LAYER_SIZES[0] * LAYER_SIZES[1];

impl PrefixIndex {
    pub fn build(pool: Arc<NewsPool>) -> Self {
        let mut buckets = vec![Vec::new(); BUCKETS];
        for (i, a) in pool.articles().iter().enumerate() {
            buckets[a.sid.prefix().bucket()].push(IndexEntry {
                s3: a.sid.s3,
                article: i as u32,
            });
        }
        for bucket in &mut buckets {
            bucket.sort_by(|x, y| {
                x.s3.cmp(&y.s3)
                    .then_with(|| pool.article(x.article as usize).id.cmp(&pool.article(y.article as usize).id))
            });
        }
        PrefixIndex { pool, buckets }
    }

    pub fn pool(&self) -> &Arc<NewsPool> {
        &self.pool
    }

    pub fn built_from(&self) -> u64 {
        self.pool.version()
    }

    pub fn bucket(&self, s1: u16, s2: u16) -> &[IndexEntry] {
        &self.buckets[SidPrefix { s1, s2, s3: 0 }.bucket()]
    }

    pub fn buckets(&self) -> impl Iterator<Item = ((u16, u16), &[IndexEntry])> {
        self.buckets.iter().enumerate().map(|(b, entries)| {
            (
                ((b / LAYER_SIZES[1]) as u16, (b % LAYER_SIZES[1]) as u16),
                entries.as_slice(),
            )
        })
    }

    pub fn article(&self, entry: &IndexEntry) -> &Article {
        self.pool.article(entry.article as usize)
    }

    /// Entries of bucket `(s1, s2)` with `lo <= s3 <= hi`.
    pub fn window(&self, s1: u16, s2: u16, lo: u16, hi: u16) -> &[IndexEntry] {
        let bucket = self.bucket(s1, s2);
        let start = bucket.partition_point(|e| e.s3 < lo);
        let end = bucket.partition_point(|e| e.s3 <= hi);
        &bucket[start..end.max(start)]
    }
}
