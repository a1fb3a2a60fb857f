use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::context::{formalize_context, SEP_TOKEN};
use super::features::FeatureSequence;
use super::manifest::{Manifest, Record, Split};
use crate::error::{Error, Result};
use crate::textcodec::{
    serialize_ul, Emotion, Intensity, Task, TokenId, UniversalLabel, Vocabulary, PAD, SEP, UNK,
};

/// A model-ready sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalizedInput {
    pub id: String,
    pub task: Task,
    pub split: Split,
    pub tokens: Vec<TokenId>,
    pub segments: Vec<u8>,
    pub acoustic: FeatureSequence,
    pub visual: FeatureSequence,
    /// Serialized universal label; empty when the record is not complete.
    pub target: Vec<TokenId>,
    pub gold_intensity: Option<f64>,
    pub gold_emotion: Option<Emotion>,
}

/// The universal label a record carries, if both fields are present.
pub fn record_label(record: &Record) -> Result<Option<UniversalLabel>> {
    let m = &record.meta;
    let (Some(v), Some(e)) = (m.intensity, m.emotion) else {
        return Ok(None);
    };
    let intensity = Intensity::quantize(v)?;
    let polarity = match m.source_task() {
        Some(Task::Erc) => e.polarity(),
        _ => intensity.polarity(),
    };
    Ok(Some(UniversalLabel {
        polarity,
        intensity: Some(intensity),
        emotion: Some(e),
        intensity_source: m.intensity_source.unwrap_or_default(),
        emotion_source: m.emotion_source.unwrap_or_default(),
    }))
}

/// Builds text ids, segment ids and the target sequence for one record.
pub fn formalize_record(record: &Record, vocab: &Vocabulary) -> Result<FormalizedInput> {
    let m = &record.meta;
    let task = m
        .source_task()
        .ok_or_else(|| Error::invalid("formalize", format!("{}: unknown source task", m.id)))?;
    let mut dialogue: Vec<&str> = m.prev.iter().map(String::as_str).collect();
    let i = dialogue.len();
    dialogue.push(&m.text);
    dialogue.extend(m.next.iter().map(String::as_str));
    let ctx = formalize_context(&dialogue, i, task)?;
    let mut tokens: Vec<TokenId> = ctx
        .tokens
        .iter()
        .map(|t| {
            if t == SEP_TOKEN {
                SEP
            } else {
                vocab
                    .id(t)
                    .filter(|&id| id as usize >= crate::textcodec::RESERVED)
                    .unwrap_or(UNK)
            }
        })
        .collect();
    let mut segments = ctx.segments;
    if tokens.is_empty() {
        tokens.push(UNK);
        segments.push(1);
    }
    let target = match record_label(record)? {
        Some(l) => serialize_ul(&l)?.to_vec(),
        None => Vec::new(),
    };
    Ok(FormalizedInput {
        id: m.id.clone(),
        task,
        split: m.split,
        tokens,
        segments,
        acoustic: record.acoustic.clone(),
        visual: record.visual.clone(),
        target,
        gold_intensity: m.intensity,
        gold_emotion: m.emotion,
    })
}

/// Formalizes the records of one split (or all records).
pub fn formalize_split(
    manifest: &Manifest,
    split: Option<Split>,
    vocab: &Vocabulary,
) -> Result<Vec<FormalizedInput>> {
    manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.meta.split == s))
        .map(|r| formalize_record(r, vocab))
        .collect()
}

/// K samples padded to common lengths. Text pads with PAD / segment 0,
/// features with zero rows; true lengths are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub tasks: Vec<Task>,
    pub tokens: Vec<Vec<TokenId>>,
    pub segments: Vec<Vec<u8>>,
    pub text_lens: Vec<usize>,
    pub acoustic: Vec<FeatureSequence>,
    pub acoustic_lens: Vec<usize>,
    pub visual: Vec<FeatureSequence>,
    pub visual_lens: Vec<usize>,
    pub targets: Vec<Vec<TokenId>>,
    /// `false` on padded target positions.
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_inputs(inputs: &[&FormalizedInput]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        let max_text = inputs.iter().map(|x| x.tokens.len()).max().unwrap_or(1);
        let max_a = inputs.iter().map(|x| x.acoustic.len()).max().unwrap_or(1);
        let max_v = inputs.iter().map(|x| x.visual.len()).max().unwrap_or(1);
        let max_t = inputs.iter().map(|x| x.target.len()).max().unwrap_or(0);
        let pad = |v: &[TokenId], n: usize| {
            let mut v = v.to_vec();
            v.resize(n, PAD);
            v
        };
        Ok(Self {
            ids: inputs.iter().map(|x| x.id.clone()).collect(),
            tasks: inputs.iter().map(|x| x.task).collect(),
            tokens: inputs.iter().map(|x| pad(&x.tokens, max_text)).collect(),
            segments: inputs
                .iter()
                .map(|x| {
                    let mut s = x.segments.clone();
                    s.resize(max_text, 0);
                    s
                })
                .collect(),
            text_lens: inputs.iter().map(|x| x.tokens.len()).collect(),
            acoustic: inputs.iter().map(|x| x.acoustic.padded(max_a)).collect(),
            acoustic_lens: inputs.iter().map(|x| x.acoustic.len()).collect(),
            visual: inputs.iter().map(|x| x.visual.padded(max_v)).collect(),
            visual_lens: inputs.iter().map(|x| x.visual.len()).collect(),
            targets: inputs.iter().map(|x| pad(&x.target, max_t)).collect(),
            target_mask: inputs
                .iter()
                .map(|x| (0..max_t).map(|i| i < x.target.len()).collect())
                .collect(),
        })
    }
}

/// Splits `inputs` into batches of `k` (the last may be smaller), shuffled
/// deterministically by `seed` when `shuffle` is set.
pub fn batch_iter(
    inputs: &[FormalizedInput],
    k: usize,
    seed: u64,
    shuffle: bool,
    contrastive: bool,
) -> Result<Vec<Batch>> {
    if k == 0 || (contrastive && k < 2) {
        return Err(Error::Config(format!(
            "batch size {k} too small{}",
            if contrastive {
                " for contrastive learning (need >= 2)"
            } else {
                ""
            }
        )));
    }
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(k)
        .map(|idx| Batch::from_inputs(&idx.iter().map(|&i| &inputs[i]).collect::<Vec<_>>()))
        .collect()
}
