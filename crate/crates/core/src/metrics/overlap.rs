use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::textproc::{Analyzer, TextError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    #[default]
    Jaccard,
    OverGenerated,
    OverGold,
}

pub fn set_overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>, mode: OverlapMode) -> f64 {
    let inter = a.intersection(b).count();
    let denom = match mode {
        OverlapMode::Jaccard => a.union(b).count(),
        OverlapMode::OverGenerated => a.len(),
        OverlapMode::OverGold => b.len(),
    };
    if denom == 0 {
        0.0
    } else {
        inter as f64 / denom as f64
    }
}

/// Overlap of the lemma sets of a generated answer `a` and a gold answer `b`.
pub fn lemma_overlap(a: &str, b: &str, mode: OverlapMode, analyzer: &Analyzer) -> Result<f64, TextError> {
    let la: BTreeSet<String> = analyzer.lemmas(a)?.into_iter().collect();
    let lb: BTreeSet<String> = analyzer.lemmas(b)?.into_iter().collect();
    Ok(set_overlap(&la, &lb, mode))
}
