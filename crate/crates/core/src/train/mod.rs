//! Batched loss assembly, optimizers and the training loop.

mod optim;

use std::path::Path;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{LrGroup, Optimizer, OptimizerKind};

use crate::datapipe::{batch_iter, Batch, FormalizedInput};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput};
use crate::numcore::{Graph, ParamStore, Var};
use crate::objectives::{
    inter_modal_cl, task_nll, total_loss, total_loss_graph, LossBreakdown, LossCurveWriter,
};
use crate::textcodec::{TokenId, BOS};

/// Which non-verbal streams are removed: their features are zeroed and
/// their contrastive term is dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropModality {
    #[default]
    None,
    A,
    V,
    Av,
}

impl DropModality {
    pub fn drops_acoustic(self) -> bool {
        matches!(self, DropModality::A | DropModality::Av)
    }

    pub fn drops_visual(self) -> bool {
        matches!(self, DropModality::V | DropModality::Av)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DropModality::None => "none",
            DropModality::A => "a",
            DropModality::V => "v",
            DropModality::Av => "av",
        }
    }
}

impl FromStr for DropModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "" => Ok(DropModality::None),
            "a" => Ok(DropModality::A),
            "v" => Ok(DropModality::V),
            "av" | "va" => Ok(DropModality::Av),
            _ => Err(Error::Config(format!(
                "drop-modality {s:?}: expected a, v or av"
            ))),
        }
    }
}

/// Per-component seeds derived from one master seed by fixed offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub synth: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        Self {
            init: master,
            shuffle: master.wrapping_add(1_000_003),
            dropout: master.wrapping_add(2_000_003),
            synth: master.wrapping_add(3_000_017),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: [f64; 3],
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub drop_modality: DropModality,
    /// Validate every this many epochs (and after the last); 0 validates
    /// only at the end.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: [3e-4, 1e-4, 1e-4],
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip: 0.0,
            batch_size: 8,
            epochs: 10,
            alpha: 0.5,
            beta: 0.5,
            tau: 1.0,
            drop_modality: DropModality::None,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lr.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad(format!(
                "learning rates {:?} must be finite and >= 0",
                self.lr
            ));
        }
        if !(self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.beta.is_finite()
            && self.beta >= 0.0)
        {
            return bad(format!(
                "alpha {} and beta {} must be finite and >= 0",
                self.alpha, self.beta
            ));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return bad(format!(
                "grad_clip {} must be finite and >= 0",
                self.grad_clip
            ));
        }
        Ok(())
    }
}

/// Zeroes the features of dropped modalities in place.
pub fn apply_drop(batch: &mut Batch, drop: DropModality) {
    if drop.drops_acoustic() {
        batch.acoustic.iter_mut().for_each(|f| *f = f.zeroed());
    }
    if drop.drops_visual() {
        batch.visual.iter_mut().for_each(|f| *f = f.zeroed());
    }
}

/// Zeroes the features of dropped modalities on individual samples.
pub fn drop_inputs(inputs: &mut [FormalizedInput], drop: DropModality) {
    for x in inputs {
        if drop.drops_acoustic() {
            x.acoustic = x.acoustic.zeroed();
        }
        if drop.drops_visual() {
            x.visual = x.visual.zeroed();
        }
    }
}

/// Graph nodes of one batch loss.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub task: Var,
    pub ta: Vec<Var>,
    pub tv: Vec<Var>,
}

impl BatchLoss {
    pub fn breakdown(&self, g: &Graph, alpha: f64, beta: f64) -> Result<LossBreakdown> {
        let ta: Vec<f64> = self.ta.iter().map(|&v| g.scalar(v)).collect();
        let tv: Vec<f64> = self.tv.iter().map(|&v| g.scalar(v)).collect();
        total_loss(g.scalar(self.task), &ta, &tv, alpha, beta)
    }
}

/// Decoder input for a target: BOS followed by all but the last token.
pub fn teacher_input(target: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(target.len());
    v.push(BOS);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

/// Task NLL over all target positions of the batch, plus one contrastive
/// term per contrastive layer and kept modality. Batches of one sample
/// carry no contrastive terms. Features are used as given; see
/// [`apply_drop`].
pub fn batch_loss(
    g: &mut Graph,
    model: &Model,
    store: &ParamStore,
    batch: &Batch,
    alpha: f64,
    beta: f64,
    tau: f64,
    drop: DropModality,
) -> Result<BatchLoss> {
    let k = batch.len();
    let cl_on = model.config.n_cl > 0 && k >= 2;
    let mut logits = Vec::with_capacity(k);
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    let mut projections = Vec::new();
    for i in 0..k {
        let x = ModelInput::from_batch(batch, i);
        let enc = model.encode(g, store, &x)?;
        let target = &batch.targets[i];
        if target.is_empty() {
            return Err(Error::invalid(
                "batch_loss",
                format!("sample {} has no target", batch.ids[i]),
            ));
        }
        logits.push(model.decode(g, store, &enc, &teacher_input(target))?);
        targets.extend_from_slice(target);
        mask.extend_from_slice(&batch.target_mask[i]);
        if cl_on {
            projections.push(model.project_for_cl(g, store, &enc)?);
        }
    }
    let all = if k == 1 {
        logits[0]
    } else {
        g.concat_rows(&logits)?
    };
    let task = task_nll(g, all, &targets, &mask)?;

    let (mut ta, mut tv) = (Vec::new(), Vec::new());
    if cl_on {
        for j in 0..model.config.n_cl {
            let anchors: Vec<Var> = projections.iter().map(|p| p.fusion[j]).collect();
            let anchors = g.concat_rows(&anchors)?;
            if !drop.drops_acoustic() {
                let a: Vec<Var> = projections.iter().map(|p| p.acoustic).collect();
                let a = g.concat_rows(&a)?;
                ta.push(inter_modal_cl(g, anchors, a, tau)?);
            }
            if !drop.drops_visual() {
                let v: Vec<Var> = projections.iter().map(|p| p.visual).collect();
                let v = g.concat_rows(&v)?;
                tv.push(inter_modal_cl(g, anchors, v, tau)?);
            }
        }
    }
    let total = total_loss_graph(g, task, &ta, &tv, alpha, beta)?;
    Ok(BatchLoss {
        total,
        task,
        ta,
        tv,
    })
}

/// Fraction of samples whose greedy generation equals the serialized
/// gold label exactly.
pub fn exact_match(model: &Model, inputs: &[FormalizedInput], drop: DropModality) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::invalid("exact_match", "no samples"));
    }
    let mut inputs = inputs.to_vec();
    drop_inputs(&mut inputs, drop);
    let hits: Vec<bool> = inputs
        .par_iter()
        .map(|x| Ok(model.generate(&ModelInput::from(x))? == x.target))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / inputs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// One row per optimizer step.
    pub curve: Vec<LossBreakdown>,
    /// `(epoch, exact-match rate)` per validation pass.
    pub validation: Vec<(usize, f64)>,
    /// Parameters at the best validation pass (the earliest on ties).
    pub best: Option<(usize, f64, ParamStore)>,
    pub steps: usize,
}

/// Trains `model` in place. Every step's loss breakdown is appended to
/// `curve_path` when given. Aborts on a non-finite loss or gradient, naming
/// the batch.
pub fn train(
    model: &mut Model,
    train_set: &[FormalizedInput],
    valid_set: &[FormalizedInput],
    cfg: &TrainConfig,
    curve_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let seeds = Seeds::derive(cfg.seed);
    let mut writer = curve_path.map(LossCurveWriter::create).transpose()?;
    let mut opt = Optimizer::new(cfg, &model.params);
    let mut out = TrainOutcome {
        curve: Vec::new(),
        validation: Vec::new(),
        best: None,
        steps: 0,
    };
    let dropout = model.config.dropout;

    for epoch in 1..=cfg.epochs {
        let mut batches = batch_iter(
            train_set,
            cfg.batch_size,
            seeds.shuffle.wrapping_add(epoch as u64),
            true,
            false,
        )?;
        let mut epoch_loss = 0.0;
        for batch in &mut batches {
            apply_drop(batch, cfg.drop_modality);
            let step = out.steps;
            let abort = |e: Error| Error::Training {
                step,
                batch: batch.ids.join(","),
                msg: e.to_string(),
            };
            let mut g = Graph::new().with_dropout(dropout, seeds.dropout.wrapping_add(step as u64));
            let loss = batch_loss(
                &mut g,
                model,
                &model.params,
                batch,
                cfg.alpha,
                cfg.beta,
                cfg.tau,
                cfg.drop_modality,
            )
            .map_err(abort)?;
            let b = loss.breakdown(&g, cfg.alpha, cfg.beta).map_err(abort)?;
            debug_assert_eq!(b.total.to_bits(), g.scalar(loss.total).to_bits());
            let grads = g
                .backward(loss.total)
                .map_err(abort)?
                .param_grads(&model.params);
            drop(g);
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(abort(Error::invalid("backward", "non-finite gradient")));
            }
            opt.step(&mut model.params, &grads);
            if let Some(w) = writer.as_mut() {
                w.write(step, &b)?;
            }
            epoch_loss += b.total;
            out.curve.push(b);
            out.steps += 1;
        }
        info!(
            "epoch {epoch}: mean loss {:.6}",
            epoch_loss / batches.len() as f64
        );

        let due = (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
        if due && !valid_set.is_empty() {
            let rate = exact_match(model, valid_set, cfg.drop_modality)?;
            info!("epoch {epoch}: validation exact-match {rate:.4}");
            out.validation.push((epoch, rate));
            if out.best.as_ref().is_none_or(|b| rate > b.1) {
                out.best = Some((epoch, rate, model.params.clone()));
            }
        }
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
