use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::label::{Emotion, Intensity, Polarity};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];
const POLARITY_BASE: usize = SPECIALS.len();
const EMOTION_BASE: usize = POLARITY_BASE + Polarity::ALL.len();
const INTENSITY_BASE: usize = EMOTION_BASE + Emotion::ALL.len();

/// Size of the reserved block that precedes corpus words in every vocabulary.
pub const RESERVED: usize = INTENSITY_BASE + Intensity::COUNT;

/// What a token id denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Special,
    Polarity(Polarity),
    Emotion(Emotion),
    Intensity(Intensity),
    Word,
}

pub fn polarity_token(p: Polarity) -> TokenId {
    (POLARITY_BASE + p.index()) as TokenId
}

pub fn emotion_token(e: Emotion) -> TokenId {
    (EMOTION_BASE + e.index()) as TokenId
}

pub fn intensity_token(i: Intensity) -> TokenId {
    (INTENSITY_BASE + i.index()) as TokenId
}

fn reserved_tokens() -> Vec<String> {
    let mut out: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    out.extend(Polarity::ALL.iter().map(|p| format!("<pol:{p}>")));
    out.extend(Emotion::ALL.iter().map(|e| format!("<emo:{e}>")));
    out.extend(Intensity::all().map(|i| format!("<int:{i}>")));
    out
}

/// Lowercases and splits on whitespace; every non-alphanumeric character
/// other than an apostrophe becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Whitespace- and case-normalized form of `text`: its tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary over word tokens of `corpus`. Word ids follow the
    /// reserved block, ordered by descending frequency then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Vocab("empty corpus".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for tok in tokenize(doc.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = reserved_tokens();
        tokens.extend(words.into_iter().map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = reserved_tokens();
        if tokens.len() < RESERVED || tokens[..RESERVED] != reserved[..] {
            return Err(Error::Vocab(
                "reserved block missing or out of order".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!(
                    "duplicate token {t:?} at line {}",
                    i + 1
                )));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn classify(&self, id: TokenId) -> Option<TokenClass> {
        let i = id as usize;
        if i >= self.tokens.len() {
            return None;
        }
        Some(if i < POLARITY_BASE {
            TokenClass::Special
        } else if i < EMOTION_BASE {
            TokenClass::Polarity(Polarity::ALL[i - POLARITY_BASE])
        } else if i < INTENSITY_BASE {
            TokenClass::Emotion(Emotion::ALL[i - EMOTION_BASE])
        } else if i < RESERVED {
            let tenths = (i - INTENSITY_BASE) as i8 + Intensity::MIN_TENTHS;
            TokenClass::Intensity(Intensity::from_tenths(tenths).expect("grid index"))
        } else {
            TokenClass::Word
        })
    }

    /// Word ids for `text`; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text)
            .iter()
            .map(|t| match self.ids.get(t) {
                Some(&id) if id as usize >= RESERVED => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let toks = ids
            .iter()
            .map(|&id| {
                self.token(id).ok_or_else(|| {
                    Error::Vocab(format!("token id {id} out of range (size {})", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(toks.join(" "))
    }

    /// One token per line; line number (from zero) is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Free-standing form of [`Vocabulary::encode`].
pub fn encode_text(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.encode(text)
}

/// Free-standing form of [`Vocabulary::decode`].
pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    vocab.decode(ids)
}
