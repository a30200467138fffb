// SPDX-License-Identifier: Apache-2.0

//! Bounded record of delivery ids already processed.

use std::num::NonZeroUsize;
use std::sync::Mutex;

use lru::LruCache;

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug)]
pub struct DedupCache {
    seen: Mutex<LruCache<String, ()>>,
}

impl DedupCache {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity).expect("dedup capacity must be at least 1");
        Self {
            seen: Mutex::new(LruCache::new(cap)),
        }
    }

    /// Records `id` and returns true if it was not already present. The
    /// check and the insert happen under one lock, so of two concurrent
    /// callers with the same id exactly one sees true.
    pub fn insert_if_absent(&self, id: &str) -> bool {
        let mut seen = self.seen.lock().unwrap_or_else(|e| e.into_inner());
        if seen.get(id).is_some() {
            return false;
        }
        seen.put(id.to_string(), ());
        true
    }

    pub fn len(&self) -> usize {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
