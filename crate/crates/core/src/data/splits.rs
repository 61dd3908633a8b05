use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::Sequence;
use crate::error::{Error, Result};

/// Class-agnostic protocol: categories seen in training and the held-out one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSetting {
    pub name: String,
    pub train: Vec<String>,
    pub observed: Vec<String>,
    pub unseen: Vec<String>,
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SplitSetting {
    pub fn named(name: &str) -> Result<Self> {
        let (train, unseen) = match name {
            "setting-1" | "1" => (["Pedestrian", "Van", "Cyclist"], ["Car"]),
            "setting-2" | "2" => (["Car", "Van", "Cyclist"], ["Pedestrian"]),
            other => return Err(Error::Config(format!("unknown split setting `{other}`"))),
        };
        let s = SplitSetting {
            name: if name.len() == 1 { format!("setting-{name}") } else { name.to_string() },
            train: names(&train),
            observed: names(&train),
            unseen: names(&unseen),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unseen.iter().any(|u| self.train.contains(u)) {
            return Err(Error::Leakage(format!("setting {} trains on an unseen category", self.name)));
        }
        if self.observed.iter().any(|o| !self.train.contains(o)) {
            return Err(Error::Config(format!("setting {} observes an untrained category", self.name)));
        }
        Ok(())
    }
}

/// Scene-level partition into train, validation and test scenes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSplit {
    pub train: RangeInclusive<usize>,
    pub val: RangeInclusive<usize>,
    pub test: RangeInclusive<usize>,
}

impl Default for SceneSplit {
    fn default() -> Self {
        SceneSplit {
            train: 0..=16,
            val: 17..=18,
            test: 19..=20,
        }
    }
}

/// Indices into the input list. `excluded` collects every sequence that belongs to
/// none of the three pools, so the four sets partition the input.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub observed_test: Vec<usize>,
    pub unseen_test: Vec<usize>,
    pub excluded: Vec<usize>,
}

impl Splits {
    pub fn categories(&self, pool: &[usize], seqs: &[Sequence]) -> BTreeSet<String> {
        pool.iter().map(|&i| seqs[i].category.clone()).collect()
    }
}

/// Training categories in training scenes; observed and unseen categories in test scenes.
pub fn dataset_splits(setting: &SplitSetting, seqs: &[Sequence], scenes: &SceneSplit) -> Result<Splits> {
    setting.validate()?;
    let mut s = Splits::default();
    for (i, q) in seqs.iter().enumerate() {
        let cat = &q.category;
        let pool = if scenes.train.contains(&q.scene) && setting.train.contains(cat) {
            &mut s.train
        } else if scenes.test.contains(&q.scene) && setting.observed.contains(cat) {
            &mut s.observed_test
        } else if scenes.test.contains(&q.scene) && setting.unseen.contains(cat) {
            &mut s.unseen_test
        } else {
            &mut s.excluded
        };
        pool.push(i);
    }
    Ok(s)
}
