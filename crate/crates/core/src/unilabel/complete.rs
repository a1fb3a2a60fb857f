use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::datapipe::{Manifest, RecordMeta, Split};
use crate::error::{Error, Result};
use crate::textcodec::{Emotion, Intensity, Polarity, Provenance, Task, UniversalLabel};

use super::similarity::{similarity, SimilarityOracle};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub task: Task,
    pub split: Split,
    pub text: String,
    pub intensity: Option<f64>,
    pub emotion: Option<Emotion>,
    pub intensity_source: Provenance,
    pub emotion_source: Provenance,
}

impl LabeledSample {
    pub fn msa(id: &str, text: &str, intensity: f64) -> Self {
        Self::new(id, Task::Msa, text, Some(intensity), None)
    }

    pub fn erc(id: &str, text: &str, emotion: Emotion) -> Self {
        Self::new(id, Task::Erc, text, None, Some(emotion))
    }

    fn new(
        id: &str,
        task: Task,
        text: &str,
        intensity: Option<f64>,
        emotion: Option<Emotion>,
    ) -> Self {
        Self {
            id: id.to_string(),
            task,
            split: Split::Train,
            text: text.to_string(),
            intensity,
            emotion,
            intensity_source: Provenance::Original,
            emotion_source: Provenance::Original,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn from_meta(meta: &RecordMeta) -> Result<Self> {
        let task = meta.source_task().ok_or_else(|| Error::Completion {
            sample: meta.id.clone(),
            msg: "cannot determine source task".into(),
        })?;
        Ok(Self {
            id: meta.id.clone(),
            task,
            split: meta.split,
            text: meta.text.clone(),
            intensity: meta.intensity,
            emotion: meta.emotion,
            intensity_source: meta.intensity_source.unwrap_or_default(),
            emotion_source: meta.emotion_source.unwrap_or_default(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.intensity.is_some() && self.emotion.is_some()
    }

    /// The source-task label as a universal label, completed or not.
    pub fn label(&self) -> Result<UniversalLabel> {
        Ok(UniversalLabel {
            polarity: polarity_of(self)?,
            intensity: self.intensity.map(Intensity::quantize).transpose()?,
            emotion: self.emotion,
            intensity_source: self.intensity_source,
            emotion_source: self.emotion_source,
        })
    }
}

/// Polarity from the sample's source-task label. Intensities are quantized to
/// the label grid first, so values in (-0.05, 0.05) count as neutral.
pub fn polarity_of(sample: &LabeledSample) -> Result<Polarity> {
    let from_intensity = || {
        sample
            .intensity
            .map(|v| Intensity::quantize(v).map(Intensity::polarity))
    };
    let from_emotion = || sample.emotion.map(|e| Ok(e.polarity()));
    let p = match sample.task {
        Task::Msa => from_intensity().or_else(from_emotion),
        Task::Erc => from_emotion().or_else(from_intensity),
    };
    p.unwrap_or_else(|| {
        Err(Error::Completion {
            sample: sample.id.clone(),
            msg: "no label field".into(),
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopiedField {
    Intensity,
    Emotion,
}

impl fmt::Display for CopiedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CopiedField::Intensity => "intensity",
            CopiedField::Emotion => "emotion",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionOptions {
    /// Fall back to every opposite-task donor when no donor shares the polarity.
    pub widen_empty_pool: bool,
    /// Only training-split samples may donate labels.
    pub train_donors_only: bool,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        Self {
            widen_empty_pool: false,
            train_donors_only: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub label: UniversalLabel,
    pub donor_id: String,
    pub similarity: f64,
    pub field: CopiedField,
    pub widened: bool,
}

fn better(a: (f64, &str), b: (f64, &str)) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.1 < b.1,
    }
}

/// Fills the missing field of `sample` from the most similar opposite-task
/// sample of the same polarity in `pool`. Ties go to the smaller donor id.
pub fn complete_universal_label(
    sample: &LabeledSample,
    pool: &[LabeledSample],
    oracle: &dyn SimilarityOracle,
    opts: CompletionOptions,
) -> Result<Completion> {
    let err = |msg: String| Error::Completion {
        sample: sample.id.clone(),
        msg,
    };
    let field = match (sample.intensity, sample.emotion) {
        (Some(_), None) => CopiedField::Emotion,
        (None, Some(_)) => CopiedField::Intensity,
        (Some(_), Some(_)) => return Err(err("already has both fields".into())),
        (None, None) => return Err(err("no label field".into())),
    };
    let polarity = polarity_of(sample)?;
    let donors: Vec<(&LabeledSample, Polarity)> = pool
        .iter()
        .filter(|d| d.task == sample.task.other() && d.id != sample.id)
        .filter(|d| !opts.train_donors_only || d.split == Split::Train)
        .filter(|d| match field {
            CopiedField::Emotion => d.emotion.is_some() && d.emotion_source == Provenance::Original,
            CopiedField::Intensity => {
                d.intensity.is_some() && d.intensity_source == Provenance::Original
            }
        })
        .map(|d| polarity_of(d).map(|p| (d, p)))
        .collect::<Result<_>>()?;

    let mut widened = false;
    let mut candidates: Vec<&LabeledSample> = donors
        .iter()
        .filter(|(_, p)| *p == polarity)
        .map(|(d, _)| *d)
        .collect();
    if candidates.is_empty() {
        if !opts.widen_empty_pool || donors.is_empty() {
            return Err(err(format!(
                "no {} donor with {polarity} polarity; add such samples or enable pool widening",
                sample.task.other()
            )));
        }
        widened = true;
        candidates = donors.iter().map(|(d, _)| *d).collect();
    }

    let mut best: Option<(f64, &LabeledSample)> = None;
    for d in candidates {
        let s = similarity(&sample.text, &d.text, oracle).score;
        if best.is_none_or(|(bs, bd)| better((s, &d.id), (bs, &bd.id))) {
            best = Some((s, d));
        }
    }
    let (score, donor) = best.expect("non-empty candidates");

    let mut label = sample.label()?;
    match field {
        CopiedField::Emotion => {
            label.emotion = donor.emotion;
            label.emotion_source = Provenance::Generated;
        }
        CopiedField::Intensity => {
            label.intensity = donor.intensity.map(Intensity::quantize).transpose()?;
            label.intensity_source = Provenance::Generated;
        }
    }
    Ok(Completion {
        label,
        donor_id: donor.id.clone(),
        similarity: score,
        field,
        widened,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub sample_id: String,
    pub donor_id: String,
    pub similarity: f64,
    pub field: CopiedField,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnifiedDataset {
    /// MSA samples then ERC samples, each in source order.
    pub samples: Vec<LabeledSample>,
    pub generated_intensity: usize,
    pub generated_emotion: usize,
    pub widened: usize,
    pub audit: Vec<AuditRow>,
}

impl UnifiedDataset {
    pub fn write_audit(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_id\tdonor_id\tsimilarity\tcopied_field\n");
        for r in &self.audit {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                r.sample_id, r.donor_id, r.similarity, r.field
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Writes the completed fields back into the matching manifest records.
    pub fn apply_to(&self, manifest: &mut Manifest) {
        let by_id: std::collections::HashMap<&str, &LabeledSample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        for r in &mut manifest.records {
            if let Some(s) = by_id.get(r.meta.id.as_str()) {
                r.meta.task = Some(s.task);
                r.meta.intensity = s.intensity;
                r.meta.emotion = s.emotion;
                r.meta.intensity_source = Some(s.intensity_source);
                r.meta.emotion_source = Some(s.emotion_source);
            }
        }
    }
}

/// Completes every incomplete sample of both sets, each from the other set.
pub fn build_unified_dataset(
    msa: &[LabeledSample],
    erc: &[LabeledSample],
    oracle: &dyn SimilarityOracle,
    opts: CompletionOptions,
) -> Result<UnifiedDataset> {
    if msa.is_empty() || erc.is_empty() {
        return Err(Error::Completion {
            sample: "-".into(),
            msg: "both the sentiment and the emotion set must be non-empty".into(),
        });
    }
    let mut out = UnifiedDataset::default();
    let mut errors = Vec::new();
    for (set, pool) in [(msa, erc), (erc, msa)] {
        for s in set {
            if s.is_complete() {
                out.samples.push(s.clone());
                continue;
            }
            match complete_universal_label(s, pool, oracle, opts) {
                Ok(c) => {
                    let mut done = s.clone();
                    match c.field {
                        CopiedField::Emotion => {
                            done.emotion = c.label.emotion;
                            done.emotion_source = Provenance::Generated;
                            out.generated_emotion += 1;
                        }
                        CopiedField::Intensity => {
                            done.intensity = c.label.intensity.map(Intensity::value);
                            done.intensity_source = Provenance::Generated;
                            out.generated_intensity += 1;
                        }
                    }
                    out.widened += usize::from(c.widened);
                    out.audit.push(AuditRow {
                        sample_id: s.id.clone(),
                        donor_id: c.donor_id,
                        similarity: c.similarity,
                        field: c.field,
                    });
                    out.samples.push(done);
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Completion {
            sample: format!("{} sample(s)", errors.len()),
            msg: errors.join("; "),
        });
    }
    Ok(out)
}

/// Splits a mixed manifest by source task, completes it and returns the
/// completed copy with the completion record.
pub fn unify_manifest(
    manifest: &Manifest,
    oracle: &dyn SimilarityOracle,
    opts: CompletionOptions,
) -> Result<(Manifest, UnifiedDataset)> {
    let (mut msa, mut erc) = (Vec::new(), Vec::new());
    for r in &manifest.records {
        let s = LabeledSample::from_meta(&r.meta)?;
        match s.task {
            Task::Msa => msa.push(s),
            Task::Erc => erc.push(s),
        }
    }
    let unified = build_unified_dataset(&msa, &erc, oracle, opts)?;
    let mut out = manifest.clone();
    unified.apply_to(&mut out);
    Ok((out, unified))
}
