//! Universal-label construction: polarity buckets, text similarity and
//! completion of the missing label field from the other task.

mod complete;
mod similarity;

pub use complete::{
    build_unified_dataset, complete_universal_label, polarity_of, unify_manifest, AuditRow,
    Completion, CompletionOptions, CopiedField, LabeledSample, UnifiedDataset,
};
pub use similarity::{
    oracle_by_name, similarity, BowCosine, Jaccard, Similarity, SimilarityOracle, ORACLES,
};
