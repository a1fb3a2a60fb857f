use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datapipe::SynthConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Preset};
use crate::train::{DropModality, OptimizerKind, TrainConfig};

/// Every setting of a run, as one flat key space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,

    /// Replaced by the size of the vocabulary built from the training split.
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
    pub n_f: usize,
    pub n_cl: usize,
    pub bottleneck: usize,
    pub d_c: usize,
    pub l_c: usize,
    pub k_a: usize,
    pub k_v: usize,
    pub k_f: usize,
    pub max_len: usize,
    pub max_gen: usize,
    pub decoder_pmf: bool,
    pub dropout: f64,

    pub optimizer: String,
    pub lr_backbone: f64,
    pub lr_main: f64,
    pub lr_pmf: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,

    pub no_pmf: bool,
    pub no_cl: bool,
    pub drop_modality: String,

    /// Completed manifest to train on; empty means synthetic data.
    pub train_manifest: String,
    pub oracle: String,
    pub widen_empty_pool: bool,
    pub synth_msa_train: usize,
    pub synth_msa_valid: usize,
    pub synth_msa_test: usize,
    pub synth_erc_train: usize,
    pub synth_erc_valid: usize,
    pub synth_erc_test: usize,
    pub synth_filler_words: usize,
    pub synth_signal_strength: f64,
    pub synth_dialogue_len: usize,

    pub gradcheck_batch: usize,
    pub gradcheck_eps: f64,
    pub gradcheck_tol: f64,
    pub gradcheck_floor: f64,

    pub out_dir: String,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let m = ModelConfig::preset(p);
        let s = SynthConfig::default();
        let (lr, batch_size, epochs) = match p {
            Preset::Paper => ([3e-4, 1e-4, 1e-4], 96, 10),
            Preset::Desk => ([3e-3, 3e-3, 3e-3], 8, 60),
        };
        Self {
            preset: match p {
                Preset::Paper => "paper",
                Preset::Desk => "desk",
            }
            .into(),
            vocab_size: m.vocab_size,
            d_t: m.d_t,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            heads: m.heads,
            d_ff: m.d_ff,
            d_a_in: m.d_a_in,
            d_a: m.d_a,
            d_v_in: m.d_v_in,
            d_v: m.d_v,
            n_f: m.n_f,
            n_cl: m.n_cl,
            bottleneck: m.bottleneck,
            d_c: m.d_c,
            l_c: m.l_c,
            k_a: m.k_a,
            k_v: m.k_v,
            k_f: m.k_f,
            max_len: m.max_len,
            max_gen: m.max_gen,
            decoder_pmf: m.decoder_pmf,
            dropout: m.dropout,
            optimizer: "adam".into(),
            lr_backbone: lr[0],
            lr_main: lr[1],
            lr_pmf: lr[2],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            batch_size,
            epochs,
            eval_every: 10,
            seed: 0,
            alpha: 0.5,
            beta: 0.5,
            tau: 1.0,
            no_pmf: false,
            no_cl: false,
            drop_modality: "none".into(),
            train_manifest: String::new(),
            oracle: "bow-cosine".into(),
            widen_empty_pool: false,
            synth_msa_train: s.msa[0],
            synth_msa_valid: s.msa[1],
            synth_msa_test: s.msa[2],
            synth_erc_train: s.erc[0],
            synth_erc_valid: s.erc[1],
            synth_erc_test: s.erc[2],
            synth_filler_words: s.filler_words,
            synth_signal_strength: s.signal_strength,
            synth_dialogue_len: s.dialogue_len,
            gradcheck_batch: 4,
            gradcheck_eps: 1e-4,
            gradcheck_tol: 1e-4,
            gradcheck_floor: 1e-6,
            out_dir: "runs/default".into(),
        }
    }

    /// Model configuration with the ablation switches applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig {
            vocab_size: self.vocab_size,
            d_t: self.d_t,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            heads: self.heads,
            d_ff: self.d_ff,
            d_a_in: self.d_a_in,
            d_a: self.d_a,
            d_v_in: self.d_v_in,
            d_v: self.d_v,
            n_f: self.n_f,
            n_cl: self.n_cl,
            bottleneck: self.bottleneck,
            d_c: self.d_c,
            l_c: self.l_c,
            k_a: self.k_a,
            k_v: self.k_v,
            k_f: self.k_f,
            max_len: self.max_len,
            max_gen: self.max_gen,
            decoder_pmf: self.decoder_pmf,
            dropout: self.dropout,
        };
        if self.no_pmf {
            // contrastive layers are drawn from the adapters
            m.n_f = 0;
            m.n_cl = 0;
            m.decoder_pmf = false;
        }
        m
    }

    pub fn drop(&self) -> Result<DropModality> {
        self.drop_modality.parse()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let (alpha, beta) = if self.no_cl {
            (0.0, 0.0)
        } else {
            (self.alpha, self.beta)
        };
        Ok(TrainConfig {
            optimizer: self.optimizer.parse::<OptimizerKind>()?,
            lr: [self.lr_backbone, self.lr_main, self.lr_pmf],
            adam_betas: (self.adam_beta1, self.adam_beta2),
            adam_eps: self.adam_eps,
            grad_clip: self.grad_clip,
            batch_size: self.batch_size,
            epochs: self.epochs,
            alpha,
            beta,
            tau: self.tau,
            drop_modality: self.drop()?,
            eval_every: self.eval_every,
            seed: self.seed,
        })
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            msa: [
                self.synth_msa_train,
                self.synth_msa_valid,
                self.synth_msa_test,
            ],
            erc: [
                self.synth_erc_train,
                self.synth_erc_valid,
                self.synth_erc_test,
            ],
            filler_words: self.synth_filler_words,
            acoustic_dim: self.d_a_in,
            visual_dim: self.d_v_in,
            signal_strength: self.synth_signal_strength,
            dialogue_len: self.synth_dialogue_len,
            ..SynthConfig::default()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn validate(&self) -> Result<()> {
        self.preset.parse::<Preset>()?;
        self.model_config().validate()?;
        self.train_config()?.validate()?;
        self.synth_config().validate()?;
        if crate::unilabel::oracle_by_name(&self.oracle).is_none() {
            return Err(Error::Config(format!(
                "unknown similarity oracle {:?}",
                self.oracle
            )));
        }
        if self.out_dir.is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        if self.gradcheck_batch == 0
            || !(self.gradcheck_eps > 0.0)
            || !(self.gradcheck_tol > 0.0)
            || !(self.gradcheck_floor > 0.0)
        {
            return Err(Error::Config("gradcheck settings must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Writes `dir/effective_config.toml`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        self.save_to(&dir.join("effective_config.toml"))
    }

    pub fn save_to(&self, path: &Path) -> Result<PathBuf> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))?;
        Ok(path.to_path_buf())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }
}

/// Layered configuration: preset defaults, then a file, then `key=value`
/// overrides. Keys that were set explicitly are remembered.
#[derive(Clone, Debug)]
pub struct ConfigBuilder {
    table: Table,
    explicit: BTreeSet<String>,
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl ConfigBuilder {
    pub fn new(preset: Preset) -> Self {
        let table = Table::try_from(RunConfig::preset(preset)).expect("flat config converts");
        Self {
            table,
            explicit: BTreeSet::new(),
        }
    }

    fn put(&mut self, key: &str, value: Value, origin: &str) -> Result<()> {
        let Some(old) = self.table.get(key) else {
            return Err(Error::Config(format!("unknown key {key:?} ({origin})")));
        };
        // integers are accepted where floats are expected
        let value = match (old, value) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        if old.type_str() != value.type_str() {
            return Err(Error::Config(format!(
                "key {key:?} expects a {}, got a {} ({origin})",
                old.type_str(),
                value.type_str()
            )));
        }
        let mut table = self.table.clone();
        table.insert(key.to_string(), value);
        if let Err(e) = table.clone().try_into::<RunConfig>() {
            return Err(Error::Config(format!(
                "key {key:?}: {} ({origin})",
                e.message()
            )));
        }
        self.table = table;
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Table = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let mut unknown = Vec::new();
        for (k, v) in t {
            if k == "preset" {
                continue;
            }
            if !self.table.contains_key(&k) {
                unknown.push(k);
                continue;
            }
            self.put(&k, v, &path.display().to_string())?;
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "{}: unknown keys {}",
                path.display(),
                unknown.join(", ")
            )));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.put(k.trim(), parse_value(v.trim()), "--set")
    }

    pub fn set_value(&mut self, key: &str, value: impl Into<Value>) -> Result<()> {
        self.put(key, value.into(), "flag")
    }

    pub fn explicit_keys(&self) -> &BTreeSet<String> {
        &self.explicit
    }

    pub fn build(&self) -> Result<RunConfig> {
        let run: RunConfig = self
            .table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        run.validate()?;
        Ok(run)
    }
}

/// Reads the `preset` key of a config file, if present.
pub fn file_preset(path: &Path) -> Result<Option<Preset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: Table = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    match t.get("preset") {
        None => Ok(None),
        Some(Value::String(s)) => s.parse().map(Some),
        Some(v) => Err(Error::Config(format!("preset must be a string, got {v}"))),
    }
}
