//! Class labels and the raw labeled set gathered from an oracle.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inlier,
    Outlier,
}

impl Label {
    /// +1 for inliers, -1 for outliers.
    pub fn sign(self) -> f64 {
        match self {
            Label::Inlier => 1.0,
            Label::Outlier => -1.0,
        }
    }

    pub fn is_inlier(self) -> bool {
        self == Label::Inlier
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Inlier => "inlier",
            Label::Outlier => "outlier",
        })
    }
}

impl FromStr for Label {
    type Err = LamaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inlier" | "+1" | "1" => Ok(Label::Inlier),
            "outlier" | "-1" => Ok(Label::Outlier),
            other => Err(LamaError::InvalidParameter(format!(
                "unknown label token {other:?}, expected \"inlier\" or \"outlier\""
            ))),
        }
    }
}

/// Oracle-provided labels: the raw `L_in` / `L_out` pools.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub inliers: BTreeSet<usize>,
    pub outliers: BTreeSet<usize>,
}

impl LabeledSet {
    pub fn new(inliers: impl IntoIterator<Item = usize>, outliers: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set = LabeledSet {
            inliers: inliers.into_iter().collect(),
            outliers: outliers.into_iter().collect(),
        };
        if let Some(&id) = set.inliers.intersection(&set.outliers).next() {
            return Err(LamaError::AlreadyLabeled(id));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.inliers.len() + self.outliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inliers.is_empty() && self.outliers.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<Label> {
        if self.inliers.contains(&id) {
            Some(Label::Inlier)
        } else if self.outliers.contains(&id) {
            Some(Label::Outlier)
        } else {
            None
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        self.get(id).is_some()
    }

    pub fn has_both_classes(&self) -> bool {
        !self.inliers.is_empty() && !self.outliers.is_empty()
    }

    /// Adds a new label. Fails if `id` already carries one.
    pub fn insert(&mut self, id: usize, label: Label) -> Result<()> {
        if self.contains(id) {
            return Err(LamaError::AlreadyLabeled(id));
        }
        match label {
            Label::Inlier => self.inliers.insert(id),
            Label::Outlier => self.outliers.insert(id),
        };
        Ok(())
    }

    /// Labeled ids with their labels, ascending by id.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Label)> + '_ {
        let mut all: Vec<(usize, Label)> = self
            .inliers
            .iter()
            .map(|&i| (i, Label::Inlier))
            .chain(self.outliers.iter().map(|&i| (i, Label::Outlier)))
            .collect();
        all.sort_unstable();
        all.into_iter()
    }

    /// Ids in `0..n` without a label, ascending.
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|id| !self.contains(*id)).collect()
    }
}
