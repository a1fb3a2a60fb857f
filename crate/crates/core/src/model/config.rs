use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?} (expected paper or desk)"
            ))),
        }
    }
}

/// Shapes of the encoder-decoder, the modality encoders, the fusion adapters
/// and the contrastive projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_t: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub d_a_in: usize,
    pub d_a: usize,
    pub d_v_in: usize,
    pub d_v: usize,
    /// Encoder layers (counted from the top) carrying a fusion adapter.
    pub n_f: usize,
    /// Adapter layers (counted from the top) whose fusion states enter the
    /// contrastive loss.
    pub n_cl: usize,
    pub bottleneck: usize,
    pub d_c: usize,
    pub l_c: usize,
    pub k_a: usize,
    pub k_v: usize,
    pub k_f: usize,
    /// Longest accepted input, in tokens.
    pub max_len: usize,
    /// Longest generated sequence, in tokens.
    pub max_gen: usize,
    pub decoder_pmf: bool,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self {
                vocab_size: 32128,
                d_t: 768,
                enc_layers: 12,
                dec_layers: 12,
                heads: 12,
                d_ff: 3072,
                d_a_in: 74,
                d_a: 64,
                d_v_in: 35,
                d_v: 64,
                n_f: 3,
                n_cl: 3,
                bottleneck: 384,
                d_c: 64,
                l_c: 32,
                k_a: 1,
                k_v: 1,
                k_f: 1,
                max_len: 512,
                max_gen: 8,
                decoder_pmf: false,
                dropout: 0.1,
            },
            Preset::Desk => Self {
                vocab_size: 128,
                d_t: 32,
                enc_layers: 2,
                dec_layers: 2,
                heads: 4,
                d_ff: 64,
                d_a_in: 6,
                d_a: 16,
                d_v_in: 5,
                d_v: 16,
                n_f: 2,
                n_cl: 2,
                bottleneck: 16,
                d_c: 16,
                l_c: 8,
                k_a: 3,
                k_v: 3,
                k_f: 1,
                max_len: 64,
                max_gen: 8,
                decoder_pmf: false,
                dropout: 0.0,
            },
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_t / self.heads
    }

    /// Index of the first encoder layer with an adapter.
    pub fn first_fused_layer(&self) -> usize {
        self.enc_layers - self.n_f
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_t", self.d_t),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("d_a_in", self.d_a_in),
            ("d_a", self.d_a),
            ("d_v_in", self.d_v_in),
            ("d_v", self.d_v),
            ("bottleneck", self.bottleneck),
            ("d_c", self.d_c),
            ("l_c", self.l_c),
            ("k_a", self.k_a),
            ("k_v", self.k_v),
            ("k_f", self.k_f),
            ("max_len", self.max_len),
            ("max_gen", self.max_gen),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        if self.vocab_size < crate::textcodec::RESERVED {
            return bad(format!(
                "vocab_size {} below the reserved block",
                self.vocab_size
            ));
        }
        if !self.d_t.is_multiple_of(self.heads) {
            return bad(format!(
                "d_t {} not divisible by heads {}",
                self.d_t, self.heads
            ));
        }
        if self.n_f > self.enc_layers {
            return bad(format!(
                "n_f {} exceeds enc_layers {}",
                self.n_f, self.enc_layers
            ));
        }
        if self.n_cl > self.n_f {
            return bad(format!("n_cl {} exceeds n_f {}", self.n_cl, self.n_f));
        }
        if self.decoder_pmf && self.n_f > self.dec_layers {
            return bad(format!(
                "n_f {} exceeds dec_layers {}",
                self.n_f, self.dec_layers
            ));
        }
        if self.max_gen < 4 {
            return bad("max_gen must leave room for a full label (>= 4)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
