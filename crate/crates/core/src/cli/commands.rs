use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::datapipe::{
    formalize_split, load_manifest, synthesize_dataset, write_manifest, Batch, FeatureSequence,
    FormalizedInput, Manifest, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{erc_metrics, msa_metrics, MetricReport};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig, ModelInput};
use crate::numcore::{grad_check, GradCheckOptions, GradCheckReport, ParamGroup};
use crate::textcodec::{decode_prediction, Emotion, Task, TaskValue, TokenId, Vocabulary};
use crate::train::{apply_drop, batch_loss, drop_inputs, train, DropModality, Seeds, TrainOutcome};
use crate::unilabel::{oracle_by_name, unify_manifest, CompletionOptions, UnifiedDataset};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn completion_summary(u: &UnifiedDataset) -> String {
    format!(
        "completed {} samples: {} emotions and {} intensities generated, {} from widened pools",
        u.samples.len(),
        u.generated_emotion,
        u.generated_intensity,
        u.widened
    )
}

/// Writes separate raw MSA and ERC manifests (one label field each) under
/// `out/raw`.
pub fn cmd_synthesize(run: &RunConfig) -> Result<String> {
    let out = run.out_dir();
    run.save(&out)?;
    let seed = Seeds::derive(run.seed).synth;
    let m = synthesize_dataset(&run.synth_config(), seed)?;
    let (msa, erc): (Vec<_>, Vec<_>) = m
        .records
        .into_iter()
        .partition(|r| r.meta.source_task() == Some(Task::Msa));
    let msa_path = out.join("raw/msa/manifest.jsonl");
    let erc_path = out.join("raw/erc/manifest.jsonl");
    write_manifest(
        &Manifest {
            records: msa.clone(),
        },
        &msa_path,
    )?;
    write_manifest(
        &Manifest {
            records: erc.clone(),
        },
        &erc_path,
    )?;
    Ok(format!(
        "wrote {} MSA records to {}\nwrote {} ERC records to {}\n",
        msa.len(),
        msa_path.display(),
        erc.len(),
        erc_path.display()
    ))
}

/// Completes the universal labels of two manifests and writes the unified
/// manifest plus the completion audit under `out`.
pub fn cmd_prepare(
    msa: &Path,
    erc: &Path,
    oracle: &str,
    widen: bool,
    out: &Path,
) -> Result<String> {
    let oracle = oracle_by_name(oracle)
        .ok_or_else(|| Error::Config(format!("unknown similarity oracle {oracle:?}")))?;
    let mut all = load_manifest(msa)?;
    all.records.extend(load_manifest(erc)?.records);
    let opts = CompletionOptions {
        widen_empty_pool: widen,
        ..CompletionOptions::default()
    };
    let (unified, record) = unify_manifest(&all, oracle.as_ref(), opts)?;
    let path = out.join("unified.jsonl");
    write_manifest(&unified, &path)?;
    record.write_audit(&out.join("audit.tsv"))?;
    Ok(format!(
        "{}\nwrote {}\n",
        completion_summary(&record),
        path.display()
    ))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub model: Model,
    pub vocab: Vocabulary,
    pub run: RunConfig,
}

impl TrainSummary {
    pub fn describe(&self) -> String {
        let mut s = format!("trained {} steps\n", self.outcome.steps);
        if let Some(b) = self.outcome.curve.last() {
            writeln!(
                s,
                "last loss: total {} task {} cl_ta {} cl_tv {}",
                b.total,
                b.task,
                b.sum_ta(),
                b.sum_tv()
            )
            .unwrap();
        }
        for (e, r) in &self.outcome.validation {
            writeln!(s, "epoch {e}: validation exact-match {r:.4}").unwrap();
        }
        writeln!(s, "outputs in {}", self.out_dir.display()).unwrap();
        s
    }
}

/// The unified training manifest: synthetic (written under `out/data`) or
/// loaded, completing it first if any record lacks a field.
pub fn training_manifest(run: &RunConfig) -> Result<Manifest> {
    let oracle = oracle_by_name(&run.oracle)
        .ok_or_else(|| Error::Config(format!("unknown oracle {:?}", run.oracle)))?;
    let opts = CompletionOptions {
        widen_empty_pool: run.widen_empty_pool,
        ..CompletionOptions::default()
    };
    if run.train_manifest.is_empty() {
        let raw = synthesize_dataset(&run.synth_config(), Seeds::derive(run.seed).synth)?;
        let (m, record) = unify_manifest(&raw, oracle.as_ref(), opts)?;
        let dir = run.out_dir().join("data");
        write_manifest(&m, &dir.join("unified.jsonl"))?;
        record.write_audit(&dir.join("audit.tsv"))?;
        info!("{}", completion_summary(&record));
        return Ok(m);
    }
    let m = load_manifest(Path::new(&run.train_manifest))?;
    if m.records
        .iter()
        .all(|r| r.meta.intensity.is_some() && r.meta.emotion.is_some())
    {
        return Ok(m);
    }
    Ok(unify_manifest(&m, oracle.as_ref(), opts)?.0)
}

pub fn cmd_train(run: &RunConfig) -> Result<TrainSummary> {
    run.validate()?;
    let out = run.out_dir();
    let manifest = training_manifest(run)?;
    let train_records = Manifest {
        records: manifest.split(Split::Train).cloned().collect(),
    };
    if train_records.is_empty() {
        return Err(Error::Config("no training records".into()));
    }
    let vocab = Vocabulary::build(&train_records.corpus())?;
    let mut run = run.clone();
    run.vocab_size = vocab.len();
    run.save(&out)?;
    vocab.save(&out.join("vocab.txt"))?;

    let train_set = formalize_split(&manifest, Some(Split::Train), &vocab)?;
    let valid_set = formalize_split(&manifest, Some(Split::Valid), &vocab)?;
    let cfg = run.train_config()?;
    let mut model = Model::new(run.model_config(), Seeds::derive(run.seed).init)?;
    let outcome = train(
        &mut model,
        &train_set,
        &valid_set,
        &cfg,
        Some(&out.join("loss_curve.tsv")),
    )?;

    let mut v = String::from("epoch\texact_match\n");
    for (e, r) in &outcome.validation {
        writeln!(v, "{e}\t{r}").unwrap();
    }
    write_file(&out.join("validation.tsv"), v)?;
    let text = run.to_toml();
    let ckpt = |model: Model| Checkpoint {
        model,
        vocab: vocab.clone(),
        run_config: text.clone(),
    };
    save_checkpoint(&ckpt(model.clone()), &out.join("final.ckpt"))?;
    let best = match &outcome.best {
        Some((_, _, params)) => Model::from_params(model.config.clone(), params.clone())?,
        None => model.clone(),
    };
    save_checkpoint(&ckpt(best), &out.join("best.ckpt"))?;
    Ok(TrainSummary {
        out_dir: out,
        outcome,
        model,
        vocab,
        run,
    })
}

/// Keys of `ModelConfig` implied by a run-config key.
fn model_keys_of(key: &str) -> Vec<&str> {
    match key {
        "no_pmf" => vec!["n_f", "n_cl", "decoder_pmf"],
        "preset" | "vocab_size" => vec![],
        k => vec![k],
    }
}

/// Model settings that differ between a checkpoint and the caller's
/// explicitly given configuration or the data.
pub fn config_mismatches(
    ckpt: &ModelConfig,
    wanted: &ModelConfig,
    explicit: &BTreeSet<String>,
    data: Option<(usize, usize)>,
) -> Vec<String> {
    let a = toml::Table::try_from(ckpt).expect("model config converts");
    let b = toml::Table::try_from(wanted).expect("model config converts");
    let mut out = BTreeSet::new();
    for key in explicit.iter().flat_map(|k| model_keys_of(k)) {
        if let (Some(x), Some(y)) = (a.get(key), b.get(key)) {
            if x != y {
                out.insert(format!("{key} (checkpoint {x}, requested {y})"));
            }
        }
    }
    if let (Some((da, dv)), true) = (data, ckpt.n_f > 0) {
        if da != ckpt.d_a_in {
            out.insert(format!("d_a_in (checkpoint {}, data {da})", ckpt.d_a_in));
        }
        if dv != ckpt.d_v_in {
            out.insert(format!("d_v_in (checkpoint {}, data {dv})", ckpt.d_v_in));
        }
    }
    out.into_iter().collect()
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub reports: Vec<MetricReport>,
    /// Exact-match rate over samples with a complete gold label.
    pub exact_match: Option<f64>,
    pub malformed: usize,
}

impl EvalResult {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            s.push_str(&r.to_text());
        }
        if let Some(e) = self.exact_match {
            writeln!(s, "exact-match {e:.4}").unwrap();
        }
        writeln!(s, "malformed generations {}", self.malformed).unwrap();
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s: String = self.reports.iter().map(MetricReport::to_kv).collect();
        match self.exact_match {
            Some(e) => writeln!(s, "exact_match={e}").unwrap(),
            None => writeln!(s, "exact_match=null").unwrap(),
        }
        writeln!(s, "malformed={}", self.malformed).unwrap();
        s
    }
}

/// Scores generated sequences against each sample's source-task gold
/// value. Malformed generations are scored with fallback values and
/// counted.
pub fn score_generations(
    inputs: &[FormalizedInput],
    generations: &[Vec<TokenId>],
    vocab: &Vocabulary,
    task: Option<Task>,
) -> Result<EvalResult> {
    if inputs.len() != generations.len() {
        return Err(Error::Metrics(format!(
            "{} generations for {} samples",
            generations.len(),
            inputs.len()
        )));
    }
    let (mut mp, mut mg, mut ep, mut eg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut bad_m, mut bad_e) = (0, 0);
    let (mut hits, mut complete) = (0usize, 0usize);
    for (x, gen) in inputs.iter().zip(generations) {
        if task.is_some_and(|t| t != x.task) {
            continue;
        }
        if !x.target.is_empty() {
            complete += 1;
            hits += usize::from(*gen == x.target);
        }
        let p = decode_prediction(gen, x.task, vocab, true)?;
        match (x.task, p.value) {
            (Task::Msa, TaskValue::Intensity(v)) => {
                if let Some(g) = x.gold_intensity {
                    mp.push(v);
                    mg.push(g);
                    bad_m += usize::from(!p.well_formed);
                }
            }
            (Task::Erc, TaskValue::Emotion(e)) => {
                if let Some(g) = x.gold_emotion {
                    ep.push(e);
                    eg.push(g);
                    bad_e += usize::from(!p.well_formed);
                }
            }
            _ => unreachable!("prediction follows the requested task"),
        }
    }
    let mut reports = Vec::new();
    if !mp.is_empty() {
        let mut r = msa_metrics(&mp, &mg)?;
        r.malformed = bad_m;
        reports.push(r);
    }
    if !ep.is_empty() {
        let mut r = erc_metrics(&ep, &eg, &Emotion::ALL)?;
        r.malformed = bad_e;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::Metrics(
            "no samples with a gold value for the selected task".into(),
        ));
    }
    Ok(EvalResult {
        reports,
        exact_match: (complete > 0).then(|| hits as f64 / complete as f64),
        malformed: bad_m + bad_e,
    })
}

/// Greedy generations for every input, in order.
pub fn generate_all(model: &Model, inputs: &[FormalizedInput]) -> Result<Vec<Vec<TokenId>>> {
    inputs
        .par_iter()
        .map(|x| model.generate(&ModelInput::from(x)))
        .collect()
}

fn feature_dims(m: &Manifest) -> Option<(usize, usize)> {
    m.records
        .first()
        .map(|r| (r.acoustic.dim(), r.visual.dim()))
}

/// Loads a checkpoint, refusing it when it disagrees with explicitly
/// requested settings or the data's feature widths.
pub fn load_compatible(
    path: &Path,
    wanted: &RunConfig,
    explicit: &BTreeSet<String>,
    manifest: &Manifest,
) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let bad = config_mismatches(
        &ckpt.model.config,
        &wanted.model_config(),
        explicit,
        feature_dims(manifest),
    );
    if !bad.is_empty() {
        return Err(Error::Checkpoint(format!(
            "incompatible with the requested configuration: {}",
            bad.join("; ")
        )));
    }
    Ok(ckpt)
}

/// Modalities to zero at evaluation: as requested, else as trained.
pub fn eval_drop(
    ckpt: &Checkpoint,
    wanted: &RunConfig,
    explicit: &BTreeSet<String>,
) -> Result<DropModality> {
    if explicit.contains("drop_modality") {
        return wanted.drop();
    }
    match RunConfig::from_toml(&ckpt.run_config) {
        Ok(trained) => trained.drop(),
        Err(_) => Ok(DropModality::None),
    }
}

pub fn cmd_eval(
    checkpoint: &Path,
    manifest_path: &Path,
    task: Option<Task>,
    split: Option<Split>,
    wanted: &RunConfig,
    explicit: &BTreeSet<String>,
    out: &Path,
) -> Result<EvalResult> {
    let manifest = load_manifest(manifest_path)?;
    let ckpt = load_compatible(checkpoint, wanted, explicit, &manifest)?;
    let mut inputs = formalize_split(&manifest, split, &ckpt.vocab)?;
    if inputs.is_empty() {
        return Err(Error::Config("no records in the selected split".into()));
    }
    drop_inputs(&mut inputs, eval_drop(&ckpt, wanted, explicit)?);
    wanted.save(out)?;
    let gens = generate_all(&ckpt.model, &inputs)?;
    let result = score_generations(&inputs, &gens, &ckpt.vocab, task)?;
    write_file(&out.join("metrics.txt"), result.to_kv())?;
    let mut preds = String::from("id\ttask\tgenerated\n");
    for (x, g) in inputs.iter().zip(&gens) {
        let text = ckpt.vocab.decode(g).unwrap_or_else(|_| format!("{g:?}"));
        writeln!(preds, "{}\t{}\t{}", x.id, x.task, text).unwrap();
    }
    write_file(&out.join("predictions.tsv"), preds)?;
    Ok(result)
}

/// One synthetic batch sized to the model, for gradient checking.
pub fn gradcheck_batch(run: &RunConfig) -> Result<(Model, Batch)> {
    let k = run.gradcheck_batch;
    if k < 2 {
        return Err(Error::Config("gradcheck_batch must be >= 2".into()));
    }
    let synth = SynthConfig {
        msa: [k.div_ceil(2), 0, 0],
        erc: [k / 2, 0, 0],
        text_len: (3, 3),
        frames: (3, 4),
        dialogue_len: 1,
        ..run.synth_config()
    };
    let raw = synthesize_dataset(&synth, Seeds::derive(run.seed).synth)?;
    let opts = CompletionOptions {
        widen_empty_pool: true,
        ..CompletionOptions::default()
    };
    let oracle = oracle_by_name(&run.oracle)
        .ok_or_else(|| Error::Config(format!("unknown oracle {:?}", run.oracle)))?;
    let (m, _) = unify_manifest(&raw, oracle.as_ref(), opts)?;
    let vocab = Vocabulary::build(&m.corpus())?;
    let mut config = run.model_config();
    config.vocab_size = vocab.len();
    let model = Model::new(config, Seeds::derive(run.seed).init)?;
    let inputs = formalize_split(&m, None, &vocab)?;
    let mut batch = Batch::from_inputs(&inputs.iter().collect::<Vec<_>>())?;
    apply_drop(&mut batch, run.drop()?);
    Ok((model, batch))
}

pub fn cmd_gradcheck(run: &RunConfig) -> Result<GradCheckReport> {
    run.validate()?;
    if run.d_t > 64 {
        return Err(Error::Config(format!(
            "gradcheck refuses d_t = {} (limit 64)",
            run.d_t
        )));
    }
    let (model, batch) = gradcheck_batch(run)?;
    let cfg = run.train_config()?;
    let opts = GradCheckOptions {
        eps: run.gradcheck_eps,
        tol: run.gradcheck_tol,
        denom_floor: run.gradcheck_floor,
        keep_worst: 10,
    };
    info!("checking {} coordinates", model.num_scalars());
    grad_check(
        &model.params,
        |g, s| {
            Ok(batch_loss(
                g,
                &model,
                s,
                &batch,
                cfg.alpha,
                cfg.beta,
                cfg.tau,
                cfg.drop_modality,
            )?
            .total)
        },
        &opts,
    )
}

pub fn describe_gradcheck(r: &GradCheckReport) -> String {
    let mut s = format!(
        "{} coordinates, eps {:e}, tol {:e}: max relative error {:.3e}\n",
        r.checked, r.eps, r.tol, r.max_rel_error
    );
    for g in &r.groups {
        write!(
            s,
            "  {:<16} {:>7} coords  max {:.3e}",
            g.group.as_str(),
            g.coords,
            g.max_rel_error
        )
        .unwrap();
        if let Some(w) = &g.worst {
            write!(
                s,
                "  worst {}[{}] analytic {:.6e} numeric {:.6e}",
                w.param, w.index, w.analytic, w.numeric
            )
            .unwrap();
        }
        s.push('\n');
    }
    let missing: Vec<&str> = ParamGroup::ALL
        .iter()
        .filter(|g| r.group(**g).is_none())
        .map(|g| g.as_str())
        .collect();
    if !missing.is_empty() {
        writeln!(s, "  groups absent from this model: {}", missing.join(", ")).unwrap();
    }
    s.push_str(if r.passed() { "PASS\n" } else { "FAIL\n" });
    s
}

/// Writes the time-mean of adapter layer `layer` (1-based) for every record
/// as an `N × d_t` feature file, plus `<out>.labels.tsv` and
/// `<out>.config.toml`. Dropped modalities follow [`eval_drop`].
pub fn cmd_export_embeddings(
    checkpoint: &Path,
    manifest_path: &Path,
    layer: usize,
    out: &Path,
    wanted: &RunConfig,
    explicit: &BTreeSet<String>,
) -> Result<FeatureSequence> {
    let manifest = load_manifest(manifest_path)?;
    let ckpt = load_compatible(checkpoint, wanted, explicit, &manifest)?;
    let n_f = ckpt.model.config.n_f;
    if layer == 0 || layer > n_f {
        return Err(Error::Config(format!(
            "layer {layer} outside adapter layers 1..={n_f}"
        )));
    }
    let mut inputs = formalize_split(&manifest, None, &ckpt.vocab)?;
    drop_inputs(&mut inputs, eval_drop(&ckpt, wanted, explicit)?);
    wanted.save_to(&sidecar(out, ".config.toml"))?;
    let rows: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|x| ckpt.model.fusion_embedding(&ModelInput::from(x), layer))
        .collect::<Result<_>>()?;
    let d = ckpt.model.config.d_t;
    let matrix = FeatureSequence::new(rows.len(), d, rows.concat())?;
    matrix.write(out)?;
    let mut labels = String::from("row\tid\ttask\tsplit\tintensity\temotion\n");
    for (i, x) in inputs.iter().enumerate() {
        let iv = x.gold_intensity.map_or("-".to_string(), |v| v.to_string());
        let ev = x.gold_emotion.map_or("-".to_string(), |e| e.to_string());
        writeln!(labels, "{i}\t{}\t{}\t{}\t{iv}\t{ev}", x.id, x.task, x.split).unwrap();
    }
    write_file(&labels_path(out), labels)?;
    Ok(matrix)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn labels_path(out: &Path) -> PathBuf {
    sidecar(out, ".labels.tsv")
}
