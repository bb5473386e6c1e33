//! In-process journaled key-value store with an explicit sync point.
//!
//! Writes append to a log; [`Journal::sync`] marks everything so far durable.
//! [`Journal::crash`] throws away the unsynced tail and rebuilds the index,
//! which is exactly what a process kill between write and fsync would leave.

use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct Journal<K, V> {
    log: Vec<(K, Option<V>)>,
    synced: usize,
    index: BTreeMap<K, V>,
    syncs: u64,
}

impl<K: Ord + Clone, V: Clone> Default for Journal<K, V> {
    fn default() -> Self {
        Journal {
            log: Vec::new(),
            synced: 0,
            index: BTreeMap::new(),
            syncs: 0,
        }
    }
}

impl<K: Ord + Clone, V: Clone> Journal<K, V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &K) -> Option<&V> {
        self.index.get(key)
    }

    pub fn contains_key(&self, key: &K) -> bool {
        self.index.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &V)> {
        self.index.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.index.keys()
    }

    pub fn values(&self) -> impl Iterator<Item = &V> {
        self.index.values()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn put(&mut self, key: K, value: V) {
        self.log.push((key.clone(), Some(value.clone())));
        self.index.insert(key, value);
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let old = self.index.remove(key)?;
        self.log.push((key.clone(), None));
        Some(old)
    }

    /// Read-modify-write of one entry; no-op when absent.
    pub fn update(&mut self, key: &K, f: impl FnOnce(&mut V)) -> bool {
        let Some(mut value) = self.index.get(key).cloned() else {
            return false;
        };
        f(&mut value);
        self.put(key.clone(), value);
        true
    }

    /// Number of writes not yet covered by a sync.
    pub fn pending(&self) -> usize {
        self.log.len() - self.synced
    }

    pub fn sync(&mut self) {
        if self.synced != self.log.len() {
            self.synced = self.log.len();
            self.syncs += 1;
        }
    }

    pub fn sync_count(&self) -> u64 {
        self.syncs
    }

    /// Lose every unsynced write.
    pub fn crash(&mut self) {
        self.log.truncate(self.synced);
        self.index.clear();
        for (key, value) in &self.log {
            match value {
                Some(v) => {
                    self.index.insert(key.clone(), v.clone());
                }
                None => {
                    self.index.remove(key);
                }
            }
        }
    }

    /// Rewrite the log as a snapshot of the entries `keep` retains. Syncs first.
    pub fn compact(&mut self, mut keep: impl FnMut(&K, &V) -> bool) {
        self.index.retain(|k, v| keep(k, v));
        self.log = self.index.iter().map(|(k, v)| (k.clone(), Some(v.clone()))).collect();
        self.synced = self.log.len();
        self.syncs += 1;
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }
}

/// A single value with the same sync/crash discipline as [`Journal`].
#[derive(Clone, Debug, Default)]
pub struct Durable<T> {
    committed: T,
    working: T,
}

impl<T: Clone> Durable<T> {
    pub fn new(value: T) -> Self {
        Durable {
            committed: value.clone(),
            working: value,
        }
    }

    pub fn get(&self) -> &T {
        &self.working
    }

    pub fn get_mut(&mut self) -> &mut T {
        &mut self.working
    }

    pub fn sync(&mut self) {
        self.committed = self.working.clone();
    }

    pub fn crash(&mut self) {
        self.working = self.committed.clone();
    }
}
