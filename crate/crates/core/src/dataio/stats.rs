//! Per-category counts, the long-tail histogram and a budget audit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::freq::CategoryFrequencyTable;
use super::manifest::DatasetManifest;
use crate::music::{BudgetMode, BudgetPolicy, CategoryPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub action: usize,
    pub object: usize,
    pub real: u64,
    #[serde(rename = "virtual")]
    pub virtual_count: u64,
    /// Training count from the frequency table, when listed.
    pub train_count: Option<u64>,
    pub rare: Option<bool>,
    /// Budget the table implies under the report's mode.
    pub expected_virtual: Option<usize>,
    pub compliant: Option<bool>,
}

/// Categories whose training count falls in `[lo, hi)`. The count comes
/// from the frequency table, or from the manifest's real images for
/// categories the table does not list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: u64,
    pub hi: Option<u64>,
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub mode: Option<BudgetMode>,
    pub images: usize,
    pub real_images: usize,
    pub virtual_images: usize,
    pub annotations: usize,
    pub instances: u64,
    pub categories: Vec<CategoryStats>,
    pub histogram: Vec<HistogramBin>,
    /// Categories with an expected budget that the virtual counts miss.
    pub budget_violations: usize,
}

/// Decade bins: 0, [1, 10), [10, 100), ... up to the largest count.
fn histogram(counts: &[u64]) -> Vec<HistogramBin> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut bins = vec![HistogramBin { lo: 0, hi: Some(1), categories: 0 }];
    let mut lo = 1u64;
    while lo <= max {
        let hi = lo.saturating_mul(10);
        bins.push(HistogramBin { lo, hi: Some(hi), categories: 0 });
        lo = hi;
    }
    for &c in counts {
        let bin = bins
            .iter_mut()
            .find(|b| c >= b.lo && b.hi.is_none_or(|h| c < h))
            .expect("bins cover every count");
        bin.categories += 1;
    }
    bins
}

/// Summarizes `manifest` against `freq`. With a `mode`, every category in
/// the table gets an expected virtual count and a compliance flag.
pub fn stats(manifest: &DatasetManifest, freq: &CategoryFrequencyTable, mode: Option<BudgetMode>) -> StatsReport {
    let real = manifest.category_counts(Some(false));
    let virt = manifest.category_counts(Some(true));
    let cats: BTreeSet<CategoryPair> = real
        .keys()
        .chain(virt.keys())
        .copied()
        .chain(freq.categories())
        .collect();
    let policy = mode.map(BudgetPolicy::for_mode);
    let mut categories = Vec::with_capacity(cats.len());
    for c in cats {
        let entry = freq.get(c).ok();
        let virtual_count = virt.get(&c).copied().unwrap_or(0);
        let expected = policy.zip(entry).map(|(p, e)| p.budget(e));
        categories.push(CategoryStats {
            action: c.action,
            object: c.object,
            real: real.get(&c).copied().unwrap_or(0),
            virtual_count,
            train_count: entry.map(|e| e.train_count),
            rare: entry.map(|e| e.rare),
            expected_virtual: expected,
            compliant: expected.map(|n| n as u64 == virtual_count),
        });
    }
    let tail_counts: Vec<u64> = categories.iter().map(|c| c.train_count.unwrap_or(c.real)).collect();
    let virtual_images = manifest.images.iter().filter(|i| i.is_virtual()).count();
    StatsReport {
        mode,
        images: manifest.images.len(),
        real_images: manifest.images.len() - virtual_images,
        virtual_images,
        annotations: manifest.annotations.len(),
        instances: categories.iter().map(|c| c.real + c.virtual_count).sum(),
        budget_violations: categories.iter().filter(|c| c.compliant == Some(false)).count(),
        histogram: if categories.is_empty() { Vec::new() } else { histogram(&tail_counts) },
        categories,
    }
}

impl StatsReport {
    pub fn by_category(&self) -> BTreeMap<CategoryPair, &CategoryStats> {
        self.categories
            .iter()
            .map(|c| (CategoryPair::new(c.action, c.object), c))
            .collect()
    }
}
