//! Input formalization, feature files, manifests, synthetic data and batching.

mod batch;
mod context;
mod features;
mod manifest;
mod synth;

pub use batch::{
    batch_iter, formalize_record, formalize_split, record_label, Batch, FormalizedInput,
};
pub use context::{formalize_context, ContextInput, CONTEXT_TURNS, SEP_TOKEN};
pub use features::FeatureSequence;
pub use manifest::{load_manifest, write_manifest, Manifest, Record, RecordMeta, Split};
pub use synth::{
    synthesize_dataset, synthesize_with_cues, Cues, SynthConfig, NEGATIVE_CUES, POSITIVE_CUES,
};
