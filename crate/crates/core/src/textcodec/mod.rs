//! Word-level vocabulary and the universal-label target codec.

mod codec;
mod label;
mod vocab;

pub use codec::{content_tokens, decode_prediction, parse_ul, serialize_ul, Prediction, TaskValue};
pub use label::{Emotion, Intensity, Polarity, Provenance, Task, UniversalLabel};
pub use vocab::{
    detokenize, emotion_token, encode_text, intensity_token, normalize, polarity_token, tokenize,
    TokenClass, TokenId, Vocabulary, BOS, EOS, PAD, RESERVED, SEP, UNK,
};
