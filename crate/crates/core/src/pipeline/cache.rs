use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;

const COMPLETE: &str = ".complete";

/// Content-addressed store of stage outputs.
///
/// An entry lives at `<root>/<stage>/<key>/` where the key hashes the stage
/// name, the stage's configuration and the content of every input file, so
/// editing an input or a relevant setting invalidates exactly the affected
/// entries. Entries are written to a scratch directory and renamed into place.
#[derive(Debug)]
pub struct StageCache {
    root: PathBuf,
    scratch: AtomicU64,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            scratch: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(stage: &str, config: &str, input_hashes: &[String]) -> String {
        let mut text = format!("{stage}\n{config}\n");
        for h in input_hashes {
            text.push_str(h);
            text.push('\n');
        }
        io::hash_bytes(text.as_bytes())
    }

    fn entry_dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    /// Directory of a complete entry, if present.
    pub fn lookup(&self, stage: &str, key: &str) -> Option<PathBuf> {
        let dir = self.entry_dir(stage, key);
        dir.join(COMPLETE).is_file().then_some(dir)
    }

    /// Runs `produce` in a scratch directory and publishes it as the entry.
    pub fn fill(&self, stage: &str, key: &str, produce: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let n = self.scratch.fetch_add(1, Ordering::Relaxed);
        let scratch = self
            .root
            .join(stage)
            .join(format!(".tmp-{key}-{}-{n}", std::process::id()));
        if scratch.exists() {
            std::fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        }
        std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        if let Err(e) = produce(&scratch) {
            let _ = std::fs::remove_dir_all(&scratch);
            return Err(e);
        }
        io::write_bytes(&scratch.join(COMPLETE), b"")?;
        let dir = self.entry_dir(stage, key);
        if dir.exists() {
            // an incomplete leftover, or a concurrent writer of the same key
            if dir.join(COMPLETE).is_file() {
                let _ = std::fs::remove_dir_all(&scratch);
                return Ok(dir);
            }
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        match std::fs::rename(&scratch, &dir) {
            Ok(()) => Ok(dir),
            Err(_) if dir.join(COMPLETE).is_file() => {
                let _ = std::fs::remove_dir_all(&scratch);
                Ok(dir)
            }
            Err(e) => Err(Error::io(&dir, e)),
        }
    }

    /// Returns the entry for `key`, producing it on a miss. The flag is true
    /// when the entry came from the cache.
    pub fn get_or_fill(
        &self,
        stage: &str,
        key: &str,
        produce: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<(PathBuf, bool)> {
        match self.lookup(stage, key) {
            Some(dir) => Ok((dir, true)),
            None => self.fill(stage, key, produce).map(|d| (d, false)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageStats {
    pub executed: usize,
    pub cached: usize,
}

/// Work done per stage (and condition) during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub stages: BTreeMap<String, StageStats>,
}

impl RunStats {
    pub fn record(&mut self, stage: &str, executed: usize, cached: usize) {
        let s = self.stages.entry(stage.to_string()).or_default();
        s.executed += executed;
        s.cached += cached;
    }

    pub fn total_executed(&self) -> usize {
        self.stages.values().map(|s| s.executed).sum()
    }

    pub fn merge(&mut self, other: &RunStats) {
        for (k, v) in &other.stages {
            self.record(k, v.executed, v.cached);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path());
        let key = StageCache::key("align", "{}", &["abc".into()]);
        let mut calls = 0;
        let (a, hit) = cache
            .get_or_fill("align", &key, |d| {
                calls += 1;
                io::write_bytes(&d.join("x"), b"1")
            })
            .unwrap();
        assert!(!hit);
        let (b, hit) = cache.get_or_fill("align", &key, |_| unreachable!()).unwrap();
        assert!(hit);
        assert_eq!(a, b);
        assert_eq!(calls, 1);
        assert_eq!(std::fs::read(b.join("x")).unwrap(), b"1");
    }

    #[test]
    fn failed_fill_leaves_no_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path());
        let err = cache.fill("mask", "k", |_| Err(Error::Masking("boom".into())));
        assert!(err.is_err());
        assert!(cache.lookup("mask", "k").is_none());
        let left: Vec<_> = std::fs::read_dir(dir.path().join("mask")).unwrap().collect();
        assert!(left.is_empty());
    }

    #[test]
    fn keys_depend_on_every_part() {
        let base = StageCache::key("a", "c", &["h1".into()]);
        assert_ne!(base, StageCache::key("b", "c", &["h1".into()]));
        assert_ne!(base, StageCache::key("a", "d", &["h1".into()]));
        assert_ne!(base, StageCache::key("a", "c", &["h2".into()]));
        assert_ne!(base, StageCache::key("a", "c", &["h1".into(), "h1".into()]));
    }
}
