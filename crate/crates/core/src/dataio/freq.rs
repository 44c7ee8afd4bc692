use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::music::CategoryPair;

pub const FREQ_FORMAT: &str = "vil-frequency-table";

/// Categories with fewer training instances than this are rare.
pub const RARE_BELOW: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub train_count: u64,
    pub rare: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FreqHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct FreqRecord {
    action: usize,
    object: usize,
    train_count: u64,
    rare: bool,
}

/// Per-category training counts with rarity flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryFrequencyTable {
    entries: BTreeMap<CategoryPair, FrequencyEntry>,
}

impl CategoryFrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Flags a category rare when its count is below `rare_below`.
    pub fn from_counts(counts: impl IntoIterator<Item = (CategoryPair, u64)>, rare_below: u64) -> Self {
        let entries = counts
            .into_iter()
            .map(|(c, n)| {
                (
                    c,
                    FrequencyEntry {
                        train_count: n,
                        rare: n < rare_below,
                    },
                )
            })
            .collect();
        CategoryFrequencyTable { entries }
    }

    pub fn insert(&mut self, cat: CategoryPair, entry: FrequencyEntry) {
        self.entries.insert(cat, entry);
    }

    pub fn get(&self, cat: CategoryPair) -> Result<FrequencyEntry> {
        self.entries
            .get(&cat)
            .copied()
            .ok_or_else(|| Error::Config(format!("category {cat} missing from frequency table")))
    }

    pub fn contains(&self, cat: CategoryPair) -> bool {
        self.entries.contains_key(&cat)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryPair, FrequencyEntry)> + '_ {
        self.entries.iter().map(|(c, e)| (*c, *e))
    }

    pub fn categories(&self) -> impl Iterator<Item = CategoryPair> + '_ {
        self.entries.keys().copied()
    }

    pub fn rare_categories(&self) -> Vec<CategoryPair> {
        self.iter().filter(|(_, e)| e.rare).map(|(c, _)| c).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (_h, recs): (FreqHeader, Vec<FreqRecord>) = jsonl::read(path, FREQ_FORMAT, 1)?;
        let mut t = CategoryFrequencyTable::new();
        for (i, r) in recs.into_iter().enumerate() {
            let cat = CategoryPair::new(r.action, r.object);
            if t.contains(cat) {
                return Err(Error::parse(path, i + 1, format!("duplicate category {cat}")));
            }
            t.insert(
                cat,
                FrequencyEntry {
                    train_count: r.train_count,
                    rare: r.rare,
                },
            );
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = FreqHeader {
            format: FREQ_FORMAT.into(),
            version: 1,
        };
        let recs: Vec<FreqRecord> = self
            .iter()
            .map(|(c, e)| FreqRecord {
                action: c.action,
                object: c.object,
                train_count: e.train_count,
                rare: e.rare,
            })
            .collect();
        jsonl::write(path, &header, &recs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rarity_split_and_roundtrip() {
        let t = CategoryFrequencyTable::from_counts(
            [(CategoryPair::new(0, 1), 9), (CategoryPair::new(2, 3), 10)],
            RARE_BELOW,
        );
        assert!(t.get(CategoryPair::new(0, 1)).unwrap().rare);
        assert!(!t.get(CategoryPair::new(2, 3)).unwrap().rare);
        assert!(matches!(t.get(CategoryPair::new(5, 5)), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("freq.jsonl");
        t.save(&p).unwrap();
        assert_eq!(CategoryFrequencyTable::load(&p).unwrap(), t);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("freq.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"vil-frequency-table\",\"version\":1}\n\
             {\"action\":0,\"object\":0,\"train_count\":1,\"rare\":true}\n\
             {\"action\":0,\"object\":0,\"train_count\":2,\"rare\":true}\n",
        )
        .unwrap();
        assert!(matches!(CategoryFrequencyTable::load(&p), Err(Error::Parse { record: 2, .. })));
    }
}
