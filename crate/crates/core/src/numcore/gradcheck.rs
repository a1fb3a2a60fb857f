//! Central-difference gradient checking over every parameter coordinate.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::params::{ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator. Coordinates whose
    /// analytic and numeric gradients are both below this are compared in
    /// absolute terms, scaled by the floor.
    pub denom_floor: f64,
    /// How many worst coordinates to keep in the report.
    pub keep_worst: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            denom_floor: 1e-6,
            keep_worst: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub group: ParamGroup,
    pub coords: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordCheck>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub groups: Vec<GroupSummary>,
    /// Coordinates above tolerance, worst first.
    pub failures: Vec<CoordCheck>,
    pub worst: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn group(&self, g: ParamGroup) -> Option<&GroupSummary> {
        self.groups.iter().find(|s| s.group == g)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(Error::Backward(format!(
            "loss must be scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares analytic gradients from one backward pass against
/// `(f(θ + eps) − f(θ − eps)) / (2 eps)` for every coordinate of every
/// parameter in `store`. `loss_fn` must be deterministic.
pub fn grad_check<F>(
    store: &ParamStore,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    grad_check_params(store, loss_fn, opts, |_, _| true)
}

/// As [`grad_check`], restricted to parameters accepted by `select`.
pub fn grad_check_params<F, S>(
    store: &ParamStore,
    loss_fn: F,
    opts: &GradCheckOptions,
    select: S,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
    S: Fn(ParamId, &str) -> bool,
{
    if !(opts.eps > 0.0 && opts.eps <= 1e-2) {
        return Err(Error::Config(format!(
            "gradcheck eps {} outside (0, 1e-2]",
            opts.eps
        )));
    }
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let analytic = g.backward(loss)?.param_grads(store);
    drop(g);

    let targets: Vec<ParamId> = store
        .iter()
        .filter(|(id, p)| select(*id, &p.name))
        .map(|(id, _)| id)
        .collect();

    let per_param: Vec<Vec<CoordCheck>> = targets
        .par_iter()
        .map(|&pid| -> Result<Vec<CoordCheck>> {
            let mut local = store.clone();
            let param = store.get(pid);
            let n = param.value.numel();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let orig = local.value(pid).data()[i];
                local.value_mut(pid).data_mut()[i] = orig + opts.eps;
                let plus = eval_loss(&local, &loss_fn)?;
                local.value_mut(pid).data_mut()[i] = orig - opts.eps;
                let minus = eval_loss(&local, &loss_fn)?;
                local.value_mut(pid).data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * opts.eps);
                let a = analytic[pid.0].data()[i];
                out.push(CoordCheck {
                    param: param.name.clone(),
                    group: param.group,
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric, opts.denom_floor),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut all: Vec<CoordCheck> = per_param.into_iter().flatten().collect();
    let checked = all.len();
    let mut by_group: BTreeMap<ParamGroup, GroupSummary> = BTreeMap::new();
    for c in &all {
        let s = by_group.entry(c.group).or_insert(GroupSummary {
            group: c.group,
            coords: 0,
            max_rel_error: 0.0,
            worst: None,
        });
        s.coords += 1;
        if s.worst.is_none() || c.rel_error > s.max_rel_error {
            s.max_rel_error = c.rel_error;
            s.worst = Some(c.clone());
        }
    }
    all.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let max_rel_error = all.first().map_or(0.0, |c| c.rel_error);
    let failures = all
        .iter()
        .filter(|c| c.rel_error > opts.tol)
        .cloned()
        .collect();
    all.truncate(opts.keep_worst);
    Ok(GradCheckReport {
        eps: opts.eps,
        tol: opts.tol,
        checked,
        max_rel_error,
        groups: by_group.into_values().collect(),
        failures,
        worst: all,
    })
}
