//! Synthetic MSA/ERC data with planted text, acoustic and visual cues.
//!
//! Each sample draws three independent signs `t`, `a`, `v` in {-1, +1}.
//! MSA intensity is `1.2 t + 0.6 a + 0.3 v`, so the sign (polarity) comes
//! from the text cue while the exact grid value also needs both non-verbal
//! cues. ERC emotion is fixed by `(t, a)`. The text carries `t` through a cue
//! word, acoustic frames carry `a` as a mean shift, visual frames carry `v`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::features::FeatureSequence;
use super::manifest::{Manifest, Record, RecordMeta, Split};
use crate::error::{Error, Result};
use crate::textcodec::{Emotion, Task};

pub const POSITIVE_CUES: [&str; 3] = ["great", "love", "wonderful"];
pub const NEGATIVE_CUES: [&str; 3] = ["awful", "hate", "terrible"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// MSA sample counts for train / valid / test.
    pub msa: [usize; 3],
    /// ERC sample counts for train / valid / test.
    pub erc: [usize; 3],
    /// Number of distinct filler words.
    pub filler_words: usize,
    pub text_len: (usize, usize),
    pub acoustic_dim: usize,
    pub visual_dim: usize,
    pub frames: (usize, usize),
    /// Mean shift of the non-verbal cues, in noise standard deviations.
    /// The text cue word is correct with probability `min(1, strength)`.
    pub signal_strength: f64,
    pub dialogue_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            msa: [48, 8, 8],
            erc: [48, 8, 8],
            filler_words: 40,
            text_len: (3, 6),
            acoustic_dim: 6,
            visual_dim: 5,
            frames: (3, 6),
            signal_strength: 2.0,
            dialogue_len: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic data: {m}")));
        if self.msa.iter().chain(&self.erc).sum::<usize>() == 0 {
            return bad("no samples requested");
        }
        if self.filler_words == 0 || self.acoustic_dim == 0 || self.visual_dim == 0 {
            return bad("vocabulary and feature dims must be >= 1");
        }
        if self.text_len.0 > self.text_len.1 || self.frames.0 == 0 || self.frames.0 > self.frames.1
        {
            return bad("invalid length range");
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad("signal strength must be finite and >= 0");
        }
        if self.dialogue_len == 0 {
            return bad("dialogue length must be >= 1");
        }
        Ok(())
    }
}

/// Hidden cue signs of a synthetic sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cues {
    pub text: i8,
    pub acoustic: i8,
    pub visual: i8,
}

impl Cues {
    pub fn intensity(self) -> f64 {
        // integer tenths keep the value exactly on the label grid
        f64::from(
            12 * i32::from(self.text) + 6 * i32::from(self.acoustic) + 3 * i32::from(self.visual),
        ) / 10.0
    }

    pub fn emotion(self) -> Emotion {
        match (self.text, self.acoustic) {
            (1, 1) => Emotion::Excited,
            (1, _) => Emotion::Joy,
            (_, 1) => Emotion::Anger,
            _ => Emotion::Sadness,
        }
    }

    pub fn class_index(self) -> usize {
        usize::from(self.text > 0) * 4
            + usize::from(self.acoustic > 0) * 2
            + usize::from(self.visual > 0)
    }
}

fn sign<R: Rng>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

fn f32_exact(v: f64) -> f64 {
    f64::from(v as f32)
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn cues(&mut self) -> Cues {
        Cues {
            text: sign(&mut self.rng),
            acoustic: sign(&mut self.rng),
            visual: sign(&mut self.rng),
        }
    }

    fn text(&mut self, cue: i8) -> String {
        let reliable = self.rng.random::<f64>() < self.cfg.signal_strength.min(1.0);
        let shown = if reliable { cue } else { sign(&mut self.rng) };
        let pool = if shown > 0 {
            &POSITIVE_CUES
        } else {
            &NEGATIVE_CUES
        };
        let cue_word = *pool.choose(&mut self.rng).expect("non-empty");
        let n = self
            .rng
            .random_range(self.cfg.text_len.0..=self.cfg.text_len.1);
        let mut words: Vec<String> = (0..n)
            .map(|_| format!("w{}", self.rng.random_range(0..self.cfg.filler_words)))
            .collect();
        let at = self.rng.random_range(0..=words.len());
        words.insert(at, cue_word.to_string());
        words.join(" ")
    }

    fn frames(&mut self, dim: usize, cue: i8) -> FeatureSequence {
        let len = self.rng.random_range(self.cfg.frames.0..=self.cfg.frames.1);
        let shift = self.cfg.signal_strength * f64::from(cue);
        let data = (0..len * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                f32_exact(z + shift)
            })
            .collect();
        FeatureSequence::new(len, dim, data).expect("valid synthetic shape")
    }

    fn sample(&mut self, task: Task, split: Split, n: usize) -> (Record, Cues) {
        let cues = self.cues();
        let text = self.text(cues.text);
        let acoustic = self.frames(self.cfg.acoustic_dim, cues.acoustic);
        let visual = self.frames(self.cfg.visual_dim, cues.visual);
        let (intensity, emotion) = match task {
            Task::Msa => (Some(cues.intensity()), None),
            Task::Erc => (None, Some(cues.emotion())),
        };
        let meta = RecordMeta {
            id: format!("{}-{}-{n:05}", task.as_str(), split.as_str()),
            dataset: format!("synth-{}", task.as_str()),
            split,
            task: Some(task),
            text,
            prev: Vec::new(),
            next: Vec::new(),
            acoustic: String::new(),
            visual: String::new(),
            intensity,
            emotion,
            intensity_source: None,
            emotion_source: None,
        };
        (
            Record {
                meta,
                acoustic,
                visual,
            },
            cues,
        )
    }
}

/// Generates a manifest with MSA records (intensity only) followed by ERC
/// records (emotion only, grouped into dialogues with context turns).
/// Also returns the hidden cues of every record, in order.
pub fn synthesize_with_cues(cfg: &SynthConfig, seed: u64) -> Result<(Manifest, Vec<Cues>)> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let splits = [Split::Train, Split::Valid, Split::Test];
    let mut records = Vec::new();
    let mut cues = Vec::new();
    for (task, counts) in [(Task::Msa, cfg.msa), (Task::Erc, cfg.erc)] {
        for (split, &count) in splits.iter().zip(&counts) {
            let start = records.len();
            for n in 0..count {
                let (r, c) = g.sample(task, *split, n);
                records.push(r);
                cues.push(c);
            }
            if task == Task::Erc {
                link_dialogues(&mut records[start..], cfg.dialogue_len);
            }
        }
    }
    Ok((Manifest { records }, cues))
}

pub fn synthesize_dataset(cfg: &SynthConfig, seed: u64) -> Result<Manifest> {
    synthesize_with_cues(cfg, seed).map(|(m, _)| m)
}

fn link_dialogues(records: &mut [Record], dialogue_len: usize) {
    for chunk in records.chunks_mut(dialogue_len) {
        let texts: Vec<String> = chunk.iter().map(|r| r.meta.text.clone()).collect();
        for (i, r) in chunk.iter_mut().enumerate() {
            r.meta.prev = texts[i.saturating_sub(2)..i].to_vec();
            r.meta.next = texts[(i + 1).min(texts.len())..(i + 3).min(texts.len())].to_vec();
        }
    }
}
