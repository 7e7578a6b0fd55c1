//! The SID-prefix cache shared by both tracks.
//!
//! Entries are immutable `Arc`s swapped in whole, so a reader sees either
//! the previous or the next entry for a key and never a partial one.
//! Writes are last-writer-wins per key. With a log file attached, every
//! write is appended as one JSONL line and the log is replayed on open.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sid::SidPrefix;

pub const DEFAULT_TTL_SECONDS: i64 = 86_400;
pub const MAX_CACHED_PREFIXES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub ctx_hash: u64,
    pub prefixes: Vec<SidPrefix>,
    pub reason: String,
    pub ts: i64,
    pub ttl_seconds: i64,
}

impl CacheEntry {
    pub fn is_expired(&self, now: i64) -> bool {
        now - self.ts > self.ttl_seconds
    }

    fn validate(&self) -> Result<()> {
        if self.prefixes.len() > MAX_CACHED_PREFIXES {
            return Err(Error::InvalidInput(format!(
                "cache entry holds {} prefixes, limit is {MAX_CACHED_PREFIXES}",
                self.prefixes.len()
            )));
        }
        for p in &self.prefixes {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct PrefixCache {
    entries: DashMap<u64, Arc<CacheEntry>>,
    log: Option<Mutex<BufWriter<File>>>,
}

impl PrefixCache {
    pub fn new() -> Self {
        PrefixCache::default()
    }

    /// Open a cache backed by an append log, replaying what is already there.
    pub fn with_log(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries = DashMap::new();
        if path.exists() {
            crate::jsonl::visit_lines(BufReader::new(File::open(path)?), |_, e: CacheEntry| {
                e.validate()?;
                entries.insert(e.ctx_hash, Arc::new(e));
                Ok(())
            })?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(PrefixCache {
            entries,
            log: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    /// Unexpired entry for `ctx_hash` at time `now`.
    pub fn get(&self, ctx_hash: u64, now: i64) -> Option<Arc<CacheEntry>> {
        let entry = self.entries.get(&ctx_hash)?.value().clone();
        (!entry.is_expired(now)).then_some(entry)
    }

    pub fn put(&self, entry: CacheEntry) -> Result<()> {
        entry.validate()?;
        if let Some(log) = &self.log {
            let mut w = log.lock();
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.entries.insert(entry.ctx_hash, Arc::new(entry));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
