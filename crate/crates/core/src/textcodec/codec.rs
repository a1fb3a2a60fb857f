use super::label::{Emotion, Intensity, Task, UniversalLabel};
use super::vocab::{
    emotion_token, intensity_token, polarity_token, TokenClass, TokenId, Vocabulary, BOS, EOS,
};
use crate::error::{Error, Result};

/// Target sequence for a complete label: polarity, intensity, emotion, EOS.
pub fn serialize_ul(label: &UniversalLabel) -> Result<[TokenId; 4]> {
    let intensity = label
        .intensity
        .ok_or_else(|| Error::Label("cannot serialize: intensity missing".into()))?;
    let emotion = label
        .emotion
        .ok_or_else(|| Error::Label("cannot serialize: emotion missing".into()))?;
    Ok([
        polarity_token(label.polarity),
        intensity_token(intensity),
        emotion_token(emotion),
        EOS,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskValue {
    Intensity(f64),
    Emotion(Emotion),
}

impl TaskValue {
    pub fn intensity(self) -> Option<f64> {
        match self {
            TaskValue::Intensity(v) => Some(v),
            TaskValue::Emotion(_) => None,
        }
    }

    pub fn emotion(self) -> Option<Emotion> {
        match self {
            TaskValue::Emotion(e) => Some(e),
            TaskValue::Intensity(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub value: TaskValue,
    pub well_formed: bool,
}

/// Content tokens of a generated sequence: a leading BOS is dropped and
/// everything from the first EOS on is cut.
pub fn content_tokens(generated: &[TokenId]) -> &[TokenId] {
    let s = generated.strip_prefix(&[BOS]).unwrap_or(generated);
    let end = s.iter().position(|&t| t == EOS).unwrap_or(s.len());
    &s[..end]
}

/// Reads the intensity (position 1) for MSA or the emotion (position 2) for
/// ERC. With `fallback` a malformed sequence yields 0.0 / neutral and
/// `well_formed = false`; without it, an error.
pub fn decode_prediction(
    generated: &[TokenId],
    task: Task,
    vocab: &Vocabulary,
    fallback: bool,
) -> Result<Prediction> {
    let content = content_tokens(generated);
    let read = || -> Option<TaskValue> {
        if content.len() < 3 {
            return None;
        }
        match (
            task,
            vocab.classify(content[1])?,
            vocab.classify(content[2])?,
        ) {
            (Task::Msa, TokenClass::Intensity(i), _) => Some(TaskValue::Intensity(i.value())),
            (Task::Erc, _, TokenClass::Emotion(e)) => Some(TaskValue::Emotion(e)),
            _ => None,
        }
    };
    match read() {
        Some(value) => Ok(Prediction {
            value,
            well_formed: true,
        }),
        None if fallback => Ok(Prediction {
            value: match task {
                Task::Msa => TaskValue::Intensity(0.0),
                Task::Erc => TaskValue::Emotion(Emotion::Neutral),
            },
            well_formed: false,
        }),
        None => Err(Error::Label(format!(
            "malformed generation {generated:?} for task {task}"
        ))),
    }
}

/// Parses a full universal label back out of a generated sequence, if it has
/// the exact polarity / intensity / emotion shape.
pub fn parse_ul(
    generated: &[TokenId],
    vocab: &Vocabulary,
) -> Option<(super::Polarity, Intensity, Emotion)> {
    let c = content_tokens(generated);
    if c.len() != 3 {
        return None;
    }
    match (
        vocab.classify(c[0])?,
        vocab.classify(c[1])?,
        vocab.classify(c[2])?,
    ) {
        (TokenClass::Polarity(p), TokenClass::Intensity(i), TokenClass::Emotion(e)) => {
            Some((p, i, e))
        }
        _ => None,
    }
}
