use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Msa,
    Erc,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Msa => "msa",
            Task::Erc => "erc",
        }
    }

    pub fn other(self) -> Task {
        match self {
            Task::Msa => Task::Erc,
            Task::Erc => Task::Msa,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msa" => Ok(Task::Msa),
            "erc" => Ok(Task::Erc),
            _ => Err(Error::Label(format!(
                "unknown task {s:?}; expected msa or erc"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Union of the MELD and IEMOCAP emotion inventories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Joy,
    Excited,
    Surprise,
    Sadness,
    Anger,
    Angry,
    Fear,
    Disgust,
    Frustrated,
}

impl Emotion {
    pub const ALL: [Emotion; 10] = [
        Emotion::Neutral,
        Emotion::Joy,
        Emotion::Excited,
        Emotion::Surprise,
        Emotion::Sadness,
        Emotion::Anger,
        Emotion::Angry,
        Emotion::Fear,
        Emotion::Disgust,
        Emotion::Frustrated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Joy => "joy",
            Emotion::Excited => "excited",
            Emotion::Surprise => "surprise",
            Emotion::Sadness => "sadness",
            Emotion::Anger => "anger",
            Emotion::Angry => "angry",
            Emotion::Fear => "fear",
            Emotion::Disgust => "disgust",
            Emotion::Frustrated => "frustrated",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Fixed valence bucket of each emotion category.
    pub fn polarity(self) -> Polarity {
        match self {
            Emotion::Joy | Emotion::Excited | Emotion::Surprise => Polarity::Positive,
            Emotion::Neutral => Polarity::Neutral,
            Emotion::Sadness
            | Emotion::Anger
            | Emotion::Angry
            | Emotion::Fear
            | Emotion::Disgust
            | Emotion::Frustrated => Polarity::Negative,
        }
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| {
                let bucket = |p: Polarity| {
                    Emotion::ALL
                        .iter()
                        .filter(|e| e.polarity() == p)
                        .map(|e| e.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                Error::Label(format!(
                    "unknown emotion {s:?}; known positive: [{}], negative: [{}], neutral: [{}]",
                    bucket(Polarity::Positive),
                    bucket(Polarity::Negative),
                    bucket(Polarity::Neutral),
                ))
            })
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sentiment intensity on the one-decimal grid `-3.0 ..= +3.0`, stored as
/// integer tenths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Intensity(i8);

impl Intensity {
    pub const MIN_TENTHS: i8 = -30;
    pub const MAX_TENTHS: i8 = 30;
    pub const COUNT: usize = 61;

    pub fn from_tenths(t: i8) -> Result<Self> {
        if (Self::MIN_TENTHS..=Self::MAX_TENTHS).contains(&t) {
            Ok(Self(t))
        } else {
            Err(Error::Label(format!("intensity {t}/10 outside [-3, +3]")))
        }
    }

    /// Rounds to the nearest tenth (ties away from zero). Values outside
    /// `[-3, +3]` are rejected.
    pub fn quantize(value: f64) -> Result<Self> {
        if !value.is_finite() || !(-3.0..=3.0).contains(&value) {
            return Err(Error::Label(format!("intensity {value} outside [-3, +3]")));
        }
        Self::from_tenths((value * 10.0).round() as i8)
    }

    pub fn all() -> impl Iterator<Item = Intensity> {
        (Self::MIN_TENTHS..=Self::MAX_TENTHS).map(Intensity)
    }

    pub fn tenths(self) -> i8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    pub fn index(self) -> usize {
        (self.0 - Self::MIN_TENTHS) as usize
    }

    pub fn polarity(self) -> Polarity {
        match self.0.signum() {
            1 => Polarity::Positive,
            -1 => Polarity::Negative,
            _ => Polarity::Neutral,
        }
    }

    /// Signed one-decimal rendering, e.g. `+1.6`, `-0.3`, `+0.0`.
    pub fn render(self) -> String {
        let sign = if self.0 < 0 { '-' } else { '+' };
        let a = self.0.unsigned_abs();
        format!("{sign}{}.{}", a / 10, a % 10)
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Original,
    Generated,
}

/// The (polarity, intensity, emotion) triple. Fields may be missing before
/// completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UniversalLabel {
    pub polarity: Polarity,
    pub intensity: Option<Intensity>,
    pub emotion: Option<Emotion>,
    pub intensity_source: Provenance,
    pub emotion_source: Provenance,
}

impl UniversalLabel {
    /// A complete label from original annotations. Rejects a polarity that
    /// disagrees with the intensity sign.
    pub fn new(polarity: Polarity, intensity: Intensity, emotion: Emotion) -> Result<Self> {
        if intensity.polarity() != polarity {
            return Err(Error::Label(format!(
                "polarity {polarity} inconsistent with intensity {intensity}"
            )));
        }
        Ok(Self {
            polarity,
            intensity: Some(intensity),
            emotion: Some(emotion),
            intensity_source: Provenance::Original,
            emotion_source: Provenance::Original,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.intensity.is_some() && self.emotion.is_some()
    }
}
