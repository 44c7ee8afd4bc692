use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CategoryPair;
use crate::dataio::{CategoryFrequencyTable, FrequencyEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// Split by the table's rarity flag.
    Hico,
    /// Split by training count against `minority_below`.
    Vcoco,
}

impl std::str::FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hico" => Ok(BudgetMode::Hico),
            "vcoco" => Ok(BudgetMode::Vcoco),
            other => Err(Error::Config(format!("unknown dataset mode `{other}`"))),
        }
    }
}

/// Number of virtual images to keep per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub mode: BudgetMode,
    pub tail: usize,
    pub head: usize,
    pub minority_below: u64,
}

impl BudgetPolicy {
    pub fn hico() -> Self {
        BudgetPolicy {
            mode: BudgetMode::Hico,
            tail: 40,
            head: 10,
            minority_below: 10,
        }
    }

    pub fn vcoco() -> Self {
        BudgetPolicy {
            mode: BudgetMode::Vcoco,
            tail: 30,
            head: 15,
            minority_below: 10,
        }
    }

    pub fn for_mode(mode: BudgetMode) -> Self {
        match mode {
            BudgetMode::Hico => Self::hico(),
            BudgetMode::Vcoco => Self::vcoco(),
        }
    }

    pub fn is_tail(&self, entry: FrequencyEntry) -> bool {
        match self.mode {
            BudgetMode::Hico => entry.rare,
            BudgetMode::Vcoco => entry.train_count < self.minority_below,
        }
    }

    pub fn budget(&self, entry: FrequencyEntry) -> usize {
        if self.is_tail(entry) {
            self.tail
        } else {
            self.head
        }
    }

    pub fn budget_for(&self, freq: &CategoryFrequencyTable, cat: CategoryPair) -> Result<usize> {
        Ok(self.budget(freq.get(cat)?))
    }

    /// Budgets for the given categories; each must appear in the table.
    pub fn budgets_for(
        &self,
        freq: &CategoryFrequencyTable,
        cats: impl IntoIterator<Item = CategoryPair>,
    ) -> Result<BTreeMap<CategoryPair, usize>> {
        cats.into_iter()
            .map(|c| Ok((c, self.budget_for(freq, c)?)))
            .collect()
    }
}

/// Budget of every category in the table under the default policy of `mode`.
pub fn generation_budget(freq: &CategoryFrequencyTable, mode: BudgetMode) -> BTreeMap<CategoryPair, usize> {
    let policy = BudgetPolicy::for_mode(mode);
    freq.iter().map(|(c, e)| (c, policy.budget(e))).collect()
}
