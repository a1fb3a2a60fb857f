use std::collections::{BTreeMap, BTreeSet};

use crate::textcodec::tokenize;

/// Text similarity used to pick completion donors.
///
/// Scores lie in [-1, 1], are symmetric, and a text scores itself at least
/// as high as it scores anything else.
pub trait SimilarityOracle: Sync {
    fn name(&self) -> &str;
    fn score(&self, a: &str, b: &str) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub score: f64,
    /// Set when a text has no tokens, so the score carries no information.
    pub degenerate: bool,
}

pub fn similarity(a: &str, b: &str, oracle: &dyn SimilarityOracle) -> Similarity {
    let degenerate = tokenize(a).is_empty() || tokenize(b).is_empty();
    Similarity {
        score: if degenerate { 0.0 } else { oracle.score(a, b) },
        degenerate,
    }
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine of term-frequency bags over the codec's tokenizer.
#[derive(Clone, Copy, Debug, Default)]
pub struct BowCosine;

impl SimilarityOracle for BowCosine {
    fn name(&self) -> &str {
        "bow-cosine"
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        let (x, y) = (term_counts(a), term_counts(b));
        if x.is_empty() || y.is_empty() {
            return 0.0;
        }
        if x == y {
            return 1.0;
        }
        // iterate in key order so the sum does not depend on argument order
        let dot: f64 = x.iter().filter_map(|(k, v)| y.get(k).map(|w| v * w)).sum();
        let nx = x.values().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.values().map(|v| v * v).sum::<f64>().sqrt();
        (dot / (nx * ny)).clamp(-1.0, 1.0)
    }
}

/// Jaccard overlap of token sets.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jaccard;

impl SimilarityOracle for Jaccard {
    fn name(&self) -> &str {
        "jaccard"
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        let x: BTreeSet<String> = tokenize(a).into_iter().collect();
        let y: BTreeSet<String> = tokenize(b).into_iter().collect();
        let union = x.union(&y).count();
        if union == 0 {
            return 0.0;
        }
        x.intersection(&y).count() as f64 / union as f64
    }
}

pub const ORACLES: [&str; 2] = ["bow-cosine", "jaccard"];

pub fn oracle_by_name(name: &str) -> Option<Box<dyn SimilarityOracle>> {
    match name {
        "bow-cosine" => Some(Box::new(BowCosine)),
        "jaccard" => Some(Box::new(Jaccard)),
        _ => None,
    }
}
