//! Sequence NLL, inter-modality contrastive loss and the weighted total.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};
use crate::textcodec::TokenId;

/// Mean negative log-likelihood of `targets` under row-wise `logits`
/// (`T × V`), over positions where `mask` is set.
pub fn task_nll(g: &mut Graph, logits: Var, targets: &[TokenId], mask: &[bool]) -> Result<Var> {
    let (t, v) = (g.value(logits).rows(), g.value(logits).cols());
    if targets.len() != t || mask.len() != t {
        return Err(Error::Shape {
            op: "task_nll",
            lhs: vec![t, v],
            rhs: vec![targets.len(), mask.len()],
        });
    }
    let live = mask.iter().filter(|&&m| m).count();
    if live == 0 {
        return Err(Error::invalid(
            "task_nll",
            "every target position is masked",
        ));
    }
    if let Some(bad) = targets
        .iter()
        .zip(mask)
        .find(|(&x, &m)| m && x as usize >= v)
    {
        return Err(Error::invalid(
            "task_nll",
            format!("target id {} outside {v} classes", bad.0),
        ));
    }
    let cols: Vec<usize> = targets
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x as usize } else { 0 })
        .collect();
    let weights: Vec<f64> = mask
        .iter()
        .map(|&m| if m { -1.0 / live as f64 } else { 0.0 })
        .collect();
    let lp = g.log_softmax(logits)?;
    let picked = g.pick_cols(lp, &cols)?;
    let w = g.constant(Tensor::matrix(t, 1, weights)?)?;
    let weighted = g.mul(picked, w)?;
    g.sum(weighted)
}

/// Contrastive loss with text-side `anchors` and modality-side `others`,
/// both `K × d`. Row `i` of `others` is the positive for anchor `i`; the
/// other rows are its negatives. Scores are dot products divided by `tau`.
/// Returns the mean over anchors of `-log softmax(scores_i)[i]`.
pub fn inter_modal_cl(g: &mut Graph, anchors: Var, others: Var, tau: f64) -> Result<Var> {
    let (k, d) = (g.value(anchors).rows(), g.value(anchors).cols());
    if k < 2 {
        return Err(Error::invalid(
            "inter_modal_cl",
            format!("batch of {k}; need at least 2 samples"),
        ));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let (ko, dd) = (g.value(others).rows(), g.value(others).cols());
    if ko != k || dd != d {
        return Err(Error::Shape {
            op: "inter_modal_cl",
            lhs: vec![k, d],
            rhs: vec![ko, dd],
        });
    }
    let s = g.matmul_t(anchors, others)?;
    let s = if tau == 1.0 {
        s
    } else {
        g.scale(s, 1.0 / tau)?
    };
    let lp = g.log_softmax(s)?;
    let diag: Vec<usize> = (0..k).collect();
    let pos = g.pick_cols(lp, &diag)?;
    let total = g.sum(pos)?;
    g.scale(total, -1.0 / k as f64)
}

/// Value-level wrapper of [`inter_modal_cl`].
pub fn inter_modal_cl_value(anchors: &Tensor, others: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(anchors.clone())?;
    let o = g.constant(others.clone())?;
    let l = inter_modal_cl(&mut g, a, o, tau)?;
    Ok(g.scalar(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    /// Text-acoustic terms, one per contrastive layer.
    pub ta: Vec<f64>,
    /// Text-visual terms, one per contrastive layer.
    pub tv: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn sum_ta(&self) -> f64 {
        sum_left(&self.ta)
    }

    pub fn sum_tv(&self) -> f64 {
        sum_left(&self.tv)
    }
}

fn sum_left(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, &b| a + b)
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::Config(format!(
            "loss weights must be finite and >= 0 (alpha {alpha}, beta {beta})"
        )));
    }
    Ok(())
}

/// `task + alpha * sum(ta) + beta * sum(tv)`, evaluated in exactly the order
/// used by [`total_loss_graph`].
pub fn total_loss(
    task: f64,
    ta: &[f64],
    tv: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    check_weights(alpha, beta)?;
    let parts = std::iter::once(&task).chain(ta).chain(tv);
    if parts.clone().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            "total_loss",
            "loss components must be finite and >= 0",
        ));
    }
    let total = task + alpha * sum_left(ta) + beta * sum_left(tv);
    Ok(LossBreakdown {
        task,
        ta: ta.to_vec(),
        tv: tv.to_vec(),
        alpha,
        beta,
        total,
    })
}

fn sum_vars(g: &mut Graph, xs: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &x in xs {
        acc = Some(match acc {
            None => x,
            Some(a) => g.add(a, x)?,
        });
    }
    Ok(acc)
}

/// Graph form of [`total_loss`]; the node value equals the breakdown total
/// bit for bit.
pub fn total_loss_graph(
    g: &mut Graph,
    task: Var,
    ta: &[Var],
    tv: &[Var],
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    check_weights(alpha, beta)?;
    let mut total = task;
    for (terms, w) in [(ta, alpha), (tv, beta)] {
        if let Some(s) = sum_vars(g, terms)? {
            let s = g.scale(s, w)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Per-step loss curve as tab-separated text.
pub struct LossCurveWriter {
    out: BufWriter<File>,
}

pub const LOSS_CURVE_HEADER: &str = "step\ttask\tcl_ta\tcl_tv\ttotal";

impl LossCurveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "{LOSS_CURVE_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self { out })
    }

    pub fn row(step: usize, b: &LossBreakdown) -> String {
        format!(
            "{step}\t{}\t{}\t{}\t{}",
            b.task,
            b.sum_ta(),
            b.sum_tv(),
            b.total
        )
    }

    pub fn write(&mut self, step: usize, b: &LossBreakdown) -> Result<()> {
        writeln!(self.out, "{}", Self::row(step, b))
            .map_err(|e| Error::io(Path::new("loss curve"), e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out
            .flush()
            .map_err(|e| Error::io(Path::new("loss curve"), e))
    }
}

#[cfg(test)]
mod tests;
