use crate::error::{Error, Result};
use crate::textcodec::{tokenize, Task};

/// Literal separator token placed between dialogue turns.
pub const SEP_TOKEN: &str = "<sep>";

/// Context window on each side of the current utterance.
pub const CONTEXT_TURNS: usize = 2;

/// Token-level text input with its segment ids: 1 over the current
/// utterance, 0 over context turns and separators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextInput {
    pub tokens: Vec<String>,
    pub segments: Vec<u8>,
}

impl ContextInput {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Half-open token range carrying segment id 1.
    pub fn current_span(&self) -> Option<(usize, usize)> {
        let start = self.segments.iter().position(|&s| s == 1)?;
        let end = self.segments.iter().rposition(|&s| s == 1)? + 1;
        Some((start, end))
    }
}

/// For ERC, concatenates turns `i-2 ..= i+2` (turns past either end of the
/// dialogue are omitted) separated by SEP. For MSA, the utterance alone.
pub fn formalize_context<S: AsRef<str>>(
    dialogue: &[S],
    i: usize,
    task: Task,
) -> Result<ContextInput> {
    if i >= dialogue.len() {
        return Err(Error::invalid(
            "formalize_context",
            format!("index {i} out of range for {} turns", dialogue.len()),
        ));
    }
    let (lo, hi) = match task {
        Task::Msa => (i, i),
        Task::Erc => (
            i.saturating_sub(CONTEXT_TURNS),
            (i + CONTEXT_TURNS).min(dialogue.len() - 1),
        ),
    };
    let mut tokens = Vec::new();
    let mut segments = Vec::new();
    for turn in lo..=hi {
        if turn > lo {
            tokens.push(SEP_TOKEN.to_string());
            segments.push(0);
        }
        let seg = u8::from(turn == i);
        for t in tokenize(dialogue[turn].as_ref()) {
            tokens.push(t);
            segments.push(seg);
        }
    }
    Ok(ContextInput { tokens, segments })
}
