//! Encoder-decoder transformer with LSTM modality encoders, fusion adapters
//! in the top encoder layers, contrastive projections and greedy decoding.

mod checkpoint;
mod config;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, Preset};
pub use layers::{
    attention, causal_mask, feed_forward, key_mask, layer_norm, lstm, pmf_fuse, project,
    AttentionVars, ConvVars, FeedForwardVars, LayerNormVars, LstmVars, PmfVars,
};

use crate::datapipe::{Batch, FeatureSequence, FormalizedInput};
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::textcodec::{TokenId, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal(f64),
    Const(f64),
}

struct Spec {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    init: Init,
}

fn fan_in(n: usize) -> Init {
    Init::Normal(1.0 / (n as f64).sqrt())
}

#[derive(Default)]
struct Layout(Vec<Spec>);

impl Layout {
    fn add(&mut self, name: String, group: ParamGroup, shape: &[usize], init: Init) {
        self.0.push(Spec {
            name,
            group,
            shape: shape.to_vec(),
            init,
        });
    }

    fn attn(&mut self, p: &str, d: usize) {
        for m in ["q", "k", "v", "o"] {
            self.add(
                format!("{p}.{m}"),
                ParamGroup::Attention,
                &[d, d],
                fan_in(d),
            );
        }
    }

    fn ln(&mut self, p: &str, d: usize) {
        self.add(
            format!("{p}.gain"),
            ParamGroup::LayerNorm,
            &[1, d],
            Init::Const(1.0),
        );
        self.add(
            format!("{p}.bias"),
            ParamGroup::LayerNorm,
            &[1, d],
            Init::Const(0.0),
        );
    }

    fn ff(&mut self, p: &str, d: usize, d_ff: usize) {
        let g = ParamGroup::FeedForward;
        self.add(format!("{p}.w1"), g, &[d, d_ff], fan_in(d));
        self.add(format!("{p}.b1"), g, &[1, d_ff], Init::Const(0.0));
        self.add(format!("{p}.w2"), g, &[d_ff, d], fan_in(d_ff));
        self.add(format!("{p}.b2"), g, &[1, d], Init::Const(0.0));
    }

    fn pmf(&mut self, p: &str, c: &ModelConfig) {
        let (d, g) = (c.d_t, ParamGroup::Fusion);
        let cat = d + c.d_a + c.d_v;
        self.add(format!("{p}.wd"), g, &[cat, c.bottleneck], fan_in(cat));
        self.add(format!("{p}.bd"), g, &[1, c.bottleneck], Init::Const(0.0));
        self.add(
            format!("{p}.wu"),
            g,
            &[c.bottleneck, d],
            fan_in(c.bottleneck),
        );
        self.add(format!("{p}.bu"), g, &[1, d], Init::Const(0.0));
        self.add(format!("{p}.w"), g, &[d, d], fan_in(d));
    }
}

/// Every parameter of a configuration in construction order.
fn layout(c: &ModelConfig) -> Vec<Spec> {
    use ParamGroup::*;
    let mut o = Layout::default();
    let d = c.d_t;
    o.add(
        "embed.token".into(),
        Embedding,
        &[c.vocab_size, d],
        Init::Normal(0.3),
    );
    o.add(
        "embed.enc_pos".into(),
        Embedding,
        &[c.max_len, d],
        Init::Normal(0.1),
    );
    o.add(
        "embed.dec_pos".into(),
        Embedding,
        &[c.max_gen, d],
        Init::Normal(0.1),
    );
    o.add(
        "embed.segment".into(),
        Embedding,
        &[2, d],
        Init::Normal(0.1),
    );
    for l in 0..c.enc_layers {
        o.attn(&format!("enc.{l}.attn"), d);
        o.ln(&format!("enc.{l}.ln1"), d);
        o.ln(&format!("enc.{l}.ln2"), d);
        o.ff(&format!("enc.{l}.ff"), d, c.d_ff);
        if l >= c.first_fused_layer() {
            o.pmf(&format!("enc.{l}.pmf"), c);
        }
    }
    o.ln("enc.ln_final", d);
    for l in 0..c.dec_layers {
        o.attn(&format!("dec.{l}.self"), d);
        o.attn(&format!("dec.{l}.cross"), d);
        o.ln(&format!("dec.{l}.ln1"), d);
        o.ln(&format!("dec.{l}.ln2"), d);
        o.ln(&format!("dec.{l}.ln3"), d);
        o.ff(&format!("dec.{l}.ff"), d, c.d_ff);
        if c.decoder_pmf && l + c.n_f >= c.dec_layers {
            o.pmf(&format!("dec.{l}.pmf"), c);
        }
    }
    o.ln("dec.ln_final", d);
    o.add("head.w".into(), Head, &[d, c.vocab_size], fan_in(d));
    o.add("head.b".into(), Head, &[1, c.vocab_size], Init::Const(0.0));
    if c.n_f > 0 {
        for (m, d_in, d_h) in [("acoustic", c.d_a_in, c.d_a), ("visual", c.d_v_in, c.d_v)] {
            o.add(
                format!("lstm.{m}.w"),
                Lstm,
                &[d_in + d_h, 4 * d_h],
                fan_in(d_in + d_h),
            );
            o.add(format!("lstm.{m}.b"), Lstm, &[1, 4 * d_h], Init::Const(0.0));
        }
    }
    if c.n_cl > 0 {
        for (m, k, d_in) in [("acoustic", c.k_a, c.d_a), ("visual", c.k_v, c.d_v)] {
            o.add(
                format!("conv.{m}.w"),
                ConvProjection,
                &[k * d_in, c.d_c],
                fan_in(k * d_in),
            );
            o.add(
                format!("conv.{m}.b"),
                ConvProjection,
                &[1, c.d_c],
                Init::Const(0.0),
            );
        }
        for j in 0..c.n_cl {
            o.add(
                format!("conv.fusion.{j}.w"),
                ConvProjection,
                &[c.k_f * d, c.d_c],
                fan_in(c.k_f * d),
            );
            o.add(
                format!("conv.fusion.{j}.b"),
                ConvProjection,
                &[1, c.d_c],
                Init::Const(0.0),
            );
        }
    }
    o.0
}

#[derive(Clone, Debug)]
struct AttnIds([ParamId; 4]);
#[derive(Clone, Debug)]
struct LnIds([ParamId; 2]);
#[derive(Clone, Debug)]
struct FfIds([ParamId; 4]);
#[derive(Clone, Debug)]
struct PmfIds([ParamId; 5]);
#[derive(Clone, Debug)]
struct PairIds([ParamId; 2]);

#[derive(Clone, Debug)]
struct EncLayer {
    attn: AttnIds,
    ln1: LnIds,
    ln2: LnIds,
    ff: FfIds,
    pmf: Option<PmfIds>,
}

#[derive(Clone, Debug)]
struct DecLayer {
    self_attn: AttnIds,
    cross: AttnIds,
    ln1: LnIds,
    ln2: LnIds,
    ln3: LnIds,
    ff: FfIds,
    pmf: Option<PmfIds>,
}

#[derive(Clone, Debug)]
struct Ids {
    token: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    segment: ParamId,
    enc: Vec<EncLayer>,
    enc_ln: LnIds,
    dec: Vec<DecLayer>,
    dec_ln: LnIds,
    head: PairIds,
    lstm_a: Option<PairIds>,
    lstm_v: Option<PairIds>,
    conv_a: Option<PairIds>,
    conv_v: Option<PairIds>,
    conv_f: Vec<PairIds>,
}

impl Ids {
    fn resolve(c: &ModelConfig, s: &ParamStore) -> Result<Self> {
        let id = |n: &str| {
            s.id(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
        };
        let ids = |p: &str, parts: &[&str]| -> Result<Vec<ParamId>> {
            parts.iter().map(|m| id(&format!("{p}.{m}"))).collect()
        };
        let attn =
            |p: &str| ids(p, &["q", "k", "v", "o"]).map(|v| AttnIds([v[0], v[1], v[2], v[3]]));
        let ln = |p: &str| ids(p, &["gain", "bias"]).map(|v| LnIds([v[0], v[1]]));
        let ff =
            |p: &str| ids(p, &["w1", "b1", "w2", "b2"]).map(|v| FfIds([v[0], v[1], v[2], v[3]]));
        let pmf = |p: &str| {
            ids(p, &["wd", "bd", "wu", "bu", "w"]).map(|v| PmfIds([v[0], v[1], v[2], v[3], v[4]]))
        };
        let pair = |p: &str| ids(p, &["w", "b"]).map(|v| PairIds([v[0], v[1]]));
        let enc = (0..c.enc_layers)
            .map(|l| {
                Ok(EncLayer {
                    attn: attn(&format!("enc.{l}.attn"))?,
                    ln1: ln(&format!("enc.{l}.ln1"))?,
                    ln2: ln(&format!("enc.{l}.ln2"))?,
                    ff: ff(&format!("enc.{l}.ff"))?,
                    pmf: if l >= c.first_fused_layer() {
                        Some(pmf(&format!("enc.{l}.pmf"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<_>>()?;
        let dec = (0..c.dec_layers)
            .map(|l| {
                Ok(DecLayer {
                    self_attn: attn(&format!("dec.{l}.self"))?,
                    cross: attn(&format!("dec.{l}.cross"))?,
                    ln1: ln(&format!("dec.{l}.ln1"))?,
                    ln2: ln(&format!("dec.{l}.ln2"))?,
                    ln3: ln(&format!("dec.{l}.ln3"))?,
                    ff: ff(&format!("dec.{l}.ff"))?,
                    pmf: if c.decoder_pmf && l + c.n_f >= c.dec_layers {
                        Some(pmf(&format!("dec.{l}.pmf"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<_>>()?;
        let fused = c.n_f > 0;
        let cl = c.n_cl > 0;
        Ok(Self {
            token: id("embed.token")?,
            enc_pos: id("embed.enc_pos")?,
            dec_pos: id("embed.dec_pos")?,
            segment: id("embed.segment")?,
            enc,
            enc_ln: ln("enc.ln_final")?,
            dec,
            dec_ln: ln("dec.ln_final")?,
            head: pair("head")?,
            lstm_a: fused.then(|| pair("lstm.acoustic")).transpose()?,
            lstm_v: fused.then(|| pair("lstm.visual")).transpose()?,
            conv_a: cl.then(|| pair("conv.acoustic")).transpose()?,
            conv_v: cl.then(|| pair("conv.visual")).transpose()?,
            conv_f: (0..c.n_cl)
                .map(|j| pair(&format!("conv.fusion.{j}")))
                .collect::<Result<_>>()?,
        })
    }
}

/// One model input, possibly padded; true lengths select the live rows.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub tokens: &'a [TokenId],
    pub segments: &'a [u8],
    pub text_len: usize,
    pub acoustic: &'a FeatureSequence,
    pub acoustic_len: usize,
    pub visual: &'a FeatureSequence,
    pub visual_len: usize,
}

impl<'a> From<&'a FormalizedInput> for ModelInput<'a> {
    fn from(x: &'a FormalizedInput) -> Self {
        Self {
            tokens: &x.tokens,
            segments: &x.segments,
            text_len: x.tokens.len(),
            acoustic: &x.acoustic,
            acoustic_len: x.acoustic.len(),
            visual: &x.visual,
            visual_len: x.visual.len(),
        }
    }
}

impl<'a> ModelInput<'a> {
    /// The `k`-th (padded) sample of a batch.
    pub fn from_batch(b: &'a Batch, k: usize) -> Self {
        Self {
            tokens: &b.tokens[k],
            segments: &b.segments[k],
            text_len: b.text_lens[k],
            acoustic: &b.acoustic[k],
            acoustic_len: b.acoustic_lens[k],
            visual: &b.visual[k],
            visual_len: b.visual_lens[k],
        }
    }
}

/// Encoder outputs for one sample.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `n × d_t` after the final layer norm.
    pub states: Var,
    pub text_len: usize,
    /// Output of each adapter-equipped layer, bottom to top.
    pub fusion: Vec<Var>,
    pub acoustic: Option<(Var, Var)>,
    pub visual: Option<(Var, Var)>,
}

/// Pooled `1 × d_c` vectors entering the contrastive loss.
#[derive(Clone, Debug)]
pub struct ClProjections {
    /// One per contrastive layer, bottom to top.
    pub fusion: Vec<Var>,
    pub acoustic: Var,
    pub visual: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

fn bind<const N: usize>(g: &mut Graph, s: &ParamStore, ids: &[ParamId; N]) -> Result<[Var; N]> {
    let mut out = Vec::with_capacity(N);
    for &id in ids {
        out.push(g.param(s, id)?);
    }
    Ok(out.try_into().expect("length N"))
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for s in layout(&config) {
            match s.init {
                Init::Normal(std) => params.normal(&s.name, s.group, &s.shape, std, &mut rng)?,
                Init::Const(v) => params.constant(&s.name, s.group, &s.shape, v)?,
            };
        }
        let ids = Ids::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    /// Wraps an existing store, which must match the configuration's layout
    /// exactly (names, order and shapes).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        let mut problems = Vec::new();
        if expected.len() != params.len() {
            problems.push(format!(
                "{} parameters, expected {}",
                params.len(),
                expected.len()
            ));
        }
        for s in &expected {
            match params.id(&s.name) {
                None => problems.push(format!("missing {}", s.name)),
                Some(id) if params.value(id).shape() != s.shape.as_slice() => {
                    problems.push(format!(
                        "{} has shape {:?}, expected {:?}",
                        s.name,
                        params.value(id).shape(),
                        s.shape
                    ))
                }
                Some(_) => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        let ids = Ids::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    fn ln(&self, g: &mut Graph, s: &ParamStore, ids: &LnIds) -> Result<LayerNormVars> {
        let [gain, bias] = bind(g, s, &ids.0)?;
        Ok(LayerNormVars { gain, bias })
    }

    fn attn(&self, g: &mut Graph, s: &ParamStore, ids: &AttnIds) -> Result<AttentionVars> {
        let [wq, wk, wv, wo] = bind(g, s, &ids.0)?;
        Ok(AttentionVars { wq, wk, wv, wo })
    }

    fn ff(&self, g: &mut Graph, s: &ParamStore, ids: &FfIds) -> Result<FeedForwardVars> {
        let [w1, b1, w2, b2] = bind(g, s, &ids.0)?;
        Ok(FeedForwardVars { w1, b1, w2, b2 })
    }

    fn pmf(&self, g: &mut Graph, s: &ParamStore, ids: &PmfIds) -> Result<PmfVars> {
        let [wd, bd, wu, bu, w] = bind(g, s, &ids.0)?;
        Ok(PmfVars { wd, bd, wu, bu, w })
    }

    fn check_input(&self, x: &ModelInput) -> Result<()> {
        let c = &self.config;
        let n = x.tokens.len();
        let bad = |m: String| Err(Error::invalid("encode", m));
        if n == 0 || x.text_len == 0 || x.text_len > n || x.segments.len() != n {
            return bad(format!(
                "text of {n} tokens, {} segments, length {}",
                x.segments.len(),
                x.text_len
            ));
        }
        if n > c.max_len {
            return bad(format!("input of {n} tokens exceeds max_len {}", c.max_len));
        }
        if let Some(t) = x.tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return bad(format!(
                "token id {t} outside vocabulary of {}",
                c.vocab_size
            ));
        }
        if x.segments.iter().any(|&s| s > 1) {
            return bad("segment ids must be 0 or 1".into());
        }
        for (name, f, len, dim) in [
            ("acoustic", x.acoustic, x.acoustic_len, c.d_a_in),
            ("visual", x.visual, x.visual_len, c.d_v_in),
        ] {
            if c.n_f > 0 && (f.dim() != dim || len == 0 || len > f.len()) {
                return bad(format!(
                    "{name} features {}x{} (length {len}), expected width {dim}",
                    f.len(),
                    f.dim()
                ));
            }
        }
        Ok(())
    }

    /// Runs one modality through its LSTM. Returns the state sequence and
    /// the state at the true length.
    pub fn modality_encode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        features: &FeatureSequence,
        len: usize,
        acoustic: bool,
    ) -> Result<(Var, Var)> {
        let ids = if acoustic {
            &self.ids.lstm_a
        } else {
            &self.ids.lstm_v
        };
        let ids = ids
            .as_ref()
            .ok_or_else(|| Error::invalid("modality_encode", "model has no fusion layers"))?;
        let [w, b] = bind(g, s, &ids.0)?;
        let x = g.constant(features.to_tensor())?;
        lstm(g, x, len, &LstmVars { w, b })
    }

    pub fn encode(&self, g: &mut Graph, s: &ParamStore, x: &ModelInput) -> Result<Encoded> {
        self.check_input(x)?;
        let c = &self.config;
        let n = x.tokens.len();
        let ids: Vec<usize> = x.tokens.iter().map(|&t| t as usize).collect();
        let segs: Vec<usize> = x.segments.iter().map(|&t| usize::from(t)).collect();
        let positions: Vec<usize> = (0..n).collect();
        let [tok, pos, seg] = bind(g, s, &[self.ids.token, self.ids.enc_pos, self.ids.segment])?;
        let e_tok = g.embedding(tok, &ids)?;
        let e_pos = g.embedding(pos, &positions)?;
        let e_seg = g.embedding(seg, &segs)?;
        let h = g.add(e_tok, e_pos)?;
        let h = g.add(h, e_seg)?;
        let mut h = g.dropout(h)?;

        let (acoustic, visual) = if c.n_f > 0 {
            (
                Some(self.modality_encode(g, s, x.acoustic, x.acoustic_len, true)?),
                Some(self.modality_encode(g, s, x.visual, x.visual_len, false)?),
            )
        } else {
            (None, None)
        };

        let mask = key_mask(n, n, x.text_len);
        let mut fusion = Vec::with_capacity(c.n_f);
        for layer in &self.ids.enc {
            let ln1 = self.ln(g, s, &layer.ln1)?;
            let a = layer_norm(g, h, &ln1)?;
            let attn = self.attn(g, s, &layer.attn)?;
            let a = attention(g, a, a, &attn, c.heads, Some(&mask))?;
            let a = g.dropout(a)?;
            h = g.add(h, a)?;
            let ln2 = self.ln(g, s, &layer.ln2)?;
            let f = layer_norm(g, h, &ln2)?;
            let ff = self.ff(g, s, &layer.ff)?;
            let mut f = feed_forward(g, f, &ff)?;
            if let Some(p) = &layer.pmf {
                let p = self.pmf(g, s, p)?;
                let (Some((_, a_last)), Some((_, v_last))) = (acoustic, visual) else {
                    unreachable!("modality states exist whenever n_f > 0");
                };
                f = pmf_fuse(g, f, a_last, v_last, &p)?;
            }
            let f = g.dropout(f)?;
            h = g.add(h, f)?;
            if layer.pmf.is_some() {
                fusion.push(h);
            }
        }
        let ln = self.ln(g, s, &self.ids.enc_ln)?;
        let states = layer_norm(g, h, &ln)?;
        Ok(Encoded {
            states,
            text_len: x.text_len,
            fusion,
            acoustic,
            visual,
        })
    }

    /// Decoder logits (`T × V`) for the input prefix `dec_in`.
    pub fn decode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        enc: &Encoded,
        dec_in: &[TokenId],
    ) -> Result<Var> {
        let c = &self.config;
        let t = dec_in.len();
        if t == 0 || t > c.max_gen {
            return Err(Error::invalid(
                "decode",
                format!("decoder input of {t} tokens (max {})", c.max_gen),
            ));
        }
        if let Some(bad) = dec_in.iter().find(|&&x| x as usize >= c.vocab_size) {
            return Err(Error::invalid(
                "decode",
                format!("token id {bad} outside vocabulary"),
            ));
        }
        let ids: Vec<usize> = dec_in.iter().map(|&x| x as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let [tok, pos] = bind(g, s, &[self.ids.token, self.ids.dec_pos])?;
        let e_tok = g.embedding(tok, &ids)?;
        let e_pos = g.embedding(pos, &positions)?;
        let y = g.add(e_tok, e_pos)?;
        let mut y = g.dropout(y)?;
        let n = g.value(enc.states).rows();
        let self_mask = causal_mask(t);
        let cross_mask = key_mask(t, n, enc.text_len);
        for layer in &self.ids.dec {
            let ln1 = self.ln(g, s, &layer.ln1)?;
            let a = layer_norm(g, y, &ln1)?;
            let sa = self.attn(g, s, &layer.self_attn)?;
            let a = attention(g, a, a, &sa, c.heads, Some(&self_mask))?;
            let a = g.dropout(a)?;
            y = g.add(y, a)?;
            let ln2 = self.ln(g, s, &layer.ln2)?;
            let q = layer_norm(g, y, &ln2)?;
            let ca = self.attn(g, s, &layer.cross)?;
            let a = attention(g, q, enc.states, &ca, c.heads, Some(&cross_mask))?;
            let a = g.dropout(a)?;
            y = g.add(y, a)?;
            let ln3 = self.ln(g, s, &layer.ln3)?;
            let f = layer_norm(g, y, &ln3)?;
            let ff = self.ff(g, s, &layer.ff)?;
            let mut f = feed_forward(g, f, &ff)?;
            if let Some(p) = &layer.pmf {
                let p = self.pmf(g, s, p)?;
                let (Some((_, a_last)), Some((_, v_last))) = (enc.acoustic, enc.visual) else {
                    unreachable!("modality states exist whenever n_f > 0");
                };
                f = pmf_fuse(g, f, a_last, v_last, &p)?;
            }
            let f = g.dropout(f)?;
            y = g.add(y, f)?;
        }
        let ln = self.ln(g, s, &self.ids.dec_ln)?;
        let z = layer_norm(g, y, &ln)?;
        let [w, b] = bind(g, s, &self.ids.head.0)?;
        let logits = g.matmul(z, w)?;
        g.add_row(logits, b)
    }

    /// Pooled projections of the top `n_cl` fusion states and of both
    /// modality state sequences.
    pub fn project_for_cl(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        enc: &Encoded,
    ) -> Result<ClProjections> {
        let c = &self.config;
        let (Some(conv_a), Some(conv_v), Some((a_seq, _)), Some((v_seq, _))) =
            (&self.ids.conv_a, &self.ids.conv_v, enc.acoustic, enc.visual)
        else {
            return Err(Error::invalid(
                "project_for_cl",
                "contrastive layers disabled (n_cl = 0)",
            ));
        };
        let conv = |g: &mut Graph, ids: &PairIds, kernel| -> Result<ConvVars> {
            let [weight, bias] = bind(g, s, &ids.0)?;
            Ok(ConvVars {
                weight,
                bias,
                kernel,
            })
        };
        let pa = conv(g, conv_a, c.k_a)?;
        let acoustic = project(g, a_seq, &pa, c.l_c)?;
        let pv = conv(g, conv_v, c.k_v)?;
        let visual = project(g, v_seq, &pv, c.l_c)?;
        let first = enc.fusion.len() - c.n_cl;
        let mut fusion = Vec::with_capacity(c.n_cl);
        for (j, &f) in enc.fusion[first..].iter().enumerate() {
            let live = if enc.text_len < g.value(f).rows() {
                g.slice_rows(f, 0, enc.text_len)?
            } else {
                f
            };
            let pf = conv(g, &self.ids.conv_f[j], c.k_f)?;
            fusion.push(project(g, live, &pf, c.l_c)?);
        }
        Ok(ClProjections {
            fusion,
            acoustic,
            visual,
        })
    }

    /// Greedy decoding from BOS until EOS or `max_gen` tokens; ties go to
    /// the lowest token id. The result excludes BOS.
    pub fn generate_with(&self, s: &ParamStore, x: &ModelInput) -> Result<Vec<TokenId>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, s, x)?;
        let mut seq = vec![BOS];
        let mut out = Vec::new();
        while out.len() < self.config.max_gen {
            let logits = self.decode(&mut g, s, &enc, &seq)?;
            let v = g.value(logits);
            let last = v.row(v.rows() - 1);
            let mut best = 0;
            for (i, &l) in last.iter().enumerate() {
                if l > last[best] {
                    best = i;
                }
            }
            let tok = best as TokenId;
            out.push(tok);
            if tok == EOS {
                break;
            }
            seq.push(tok);
            if seq.len() > self.config.max_gen {
                break;
            }
        }
        Ok(out)
    }

    pub fn generate(&self, x: &ModelInput) -> Result<Vec<TokenId>> {
        self.generate_with(&self.params, x)
    }

    /// Time-mean of the live rows of adapter layer `j` (1-based).
    pub fn fusion_embedding(&self, x: &ModelInput, j: usize) -> Result<Vec<f64>> {
        if j == 0 || j > self.config.n_f {
            return Err(Error::invalid(
                "export",
                format!("layer {j} outside adapter layers 1..={}", self.config.n_f),
            ));
        }
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &self.params, x)?;
        let f = g.value(enc.fusion[j - 1]);
        let d = f.cols();
        let mut out = vec![0.0; d];
        for i in 0..enc.text_len {
            for (o, v) in out.iter_mut().zip(f.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= enc.text_len as f64);
        Ok(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }
}
