//! Sentiment regression metrics and emotion classification metrics.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::textcodec::{Emotion, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub n: usize,
    /// Generations that did not parse and were scored with fallback values.
    pub malformed: usize,
    /// Metric name to value, in reporting order; `None` where undefined.
    pub values: Vec<(String, Option<f64>)>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|(k, _)| k == name)
            .and_then(|(_, v)| *v)
    }

    /// Aligned human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} (N = {}, malformed = {})\n",
            self.task.as_str().to_uppercase(),
            self.n,
            self.malformed
        );
        for (k, v) in &self.values {
            match v {
                Some(v) => writeln!(s, "  {k:<12} {v:.4}").unwrap(),
                None => writeln!(s, "  {k:<12} undefined").unwrap(),
            }
        }
        s
    }

    /// `task.metric=value` lines, `null` for undefined values.
    pub fn to_kv(&self) -> String {
        let t = self.task.as_str();
        let mut s = format!("{t}.n={}\n{t}.malformed={}\n", self.n, self.malformed);
        for (k, v) in &self.values {
            match v {
                Some(v) => writeln!(s, "{t}.{k}={v}").unwrap(),
                None => writeln!(s, "{t}.{k}=null").unwrap(),
            }
        }
        s
    }
}

fn check_lengths(p: usize, g: usize) -> Result<()> {
    if p != g {
        return Err(Error::Metrics(format!(
            "{p} predictions for {g} gold labels"
        )));
    }
    if p == 0 {
        return Err(Error::Metrics("no samples".into()));
    }
    Ok(())
}

/// Seven-class bucket: clamp to [-3, 3], round half away from zero.
pub fn seven_class(v: f64) -> i32 {
    v.clamp(-3.0, 3.0).round() as i32
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Accuracy and positive-class F1 of binary decisions.
fn binary(pairs: impl Iterator<Item = (bool, bool)>) -> Option<(f64, f64)> {
    let (mut tp, mut fp, mut fneg, mut n, mut hit) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (p, g) in pairs {
        n += 1;
        hit += usize::from(p == g);
        match (p, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if n == 0 {
        return None;
    }
    Some((hit as f64 / n as f64, f1(tp, fp, fneg)))
}

fn f1(tp: f64, fp: f64, fneg: f64) -> f64 {
    let denom = 2.0 * tp + fp + fneg;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// MAE, Pearson correlation, ACC-7 and both ACC-2 / F1 conventions:
/// `*_nonneg` splits negative from non-negative (zero counts as
/// non-negative), `*_posneg` drops zero-gold samples and splits negative from
/// positive.
pub fn msa_metrics(pred: &[f64], gold: &[f64]) -> Result<MetricReport> {
    check_lengths(pred.len(), gold.len())?;
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::Metrics("non-finite intensity".into()));
    }
    let n = pred.len();
    let mae = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n as f64;
    let acc7 = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| seven_class(**p) == seven_class(**g))
        .count() as f64
        / n as f64;
    let nonneg = binary(pred.iter().zip(gold).map(|(p, g)| (*p >= 0.0, *g >= 0.0)));
    let posneg = binary(
        pred.iter()
            .zip(gold)
            .filter(|(_, g)| **g != 0.0)
            .map(|(p, g)| (*p > 0.0, *g > 0.0)),
    );
    Ok(MetricReport {
        task: Task::Msa,
        n,
        malformed: 0,
        values: vec![
            ("mae".into(), Some(mae)),
            ("corr".into(), pearson(pred, gold)),
            ("acc7".into(), Some(acc7)),
            ("acc2_nonneg".into(), nonneg.map(|x| x.0)),
            ("acc2_posneg".into(), posneg.map(|x| x.0)),
            ("f1_nonneg".into(), nonneg.map(|x| x.1)),
            ("f1_posneg".into(), posneg.map(|x| x.1)),
        ],
    })
}

/// Accuracy and support-weighted F1 over `labels`.
pub fn erc_metrics(pred: &[Emotion], gold: &[Emotion], labels: &[Emotion]) -> Result<MetricReport> {
    check_lengths(pred.len(), gold.len())?;
    if let Some(bad) = pred.iter().chain(gold).find(|e| !labels.contains(e)) {
        return Err(Error::Metrics(format!(
            "label {bad} not in the label set [{}]",
            labels
                .iter()
                .map(|e| e.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let n = pred.len();
    let acc = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / n as f64;
    let mut wf1 = 0.0;
    for &c in labels {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == c, g == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let support = tp + fneg;
        wf1 += support / n as f64 * f1(tp, fp, fneg);
    }
    Ok(MetricReport {
        task: Task::Erc,
        n,
        malformed: 0,
        values: vec![("acc".into(), Some(acc)), ("wf1".into(), Some(wf1))],
    })
}
