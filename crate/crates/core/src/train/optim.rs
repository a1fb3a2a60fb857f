use std::str::FromStr;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numcore::{ParamGroup, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!(
                "optimizer {s:?}: expected adam or sgd"
            ))),
        }
    }
}

/// Learning-rate group: the text backbone, the modality encoders and
/// contrastive projections, and the fusion adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrGroup {
    Backbone = 0,
    Main = 1,
    Fusion = 2,
}

impl LrGroup {
    pub fn of(g: ParamGroup) -> Self {
        match g {
            ParamGroup::Lstm | ParamGroup::ConvProjection => LrGroup::Main,
            ParamGroup::Fusion => LrGroup::Fusion,
            _ => LrGroup::Backbone,
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    lr: Vec<f64>,
    betas: (f64, f64),
    eps: f64,
    clip: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        let lr = store
            .iter()
            .map(|(_, p)| cfg.lr[LrGroup::of(p.group) as usize])
            .collect();
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| vec![0.0; p.value.numel()])
                .collect()
        };
        Self {
            kind: cfg.optimizer,
            lr,
            betas: cfg.adam_betas,
            eps: cfg.adam_eps,
            clip: cfg.grad_clip,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update; `grads` is indexed like the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let mut scale = 1.0;
        if self.clip > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > self.clip {
                scale = self.clip / norm;
            }
        }
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.0;
            let lr = self.lr[i];
            let g = grads[i].data();
            let w = store.value_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.iter_mut().zip(g) {
                        *w -= lr * scale * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..w.len() {
                        let gj = g[j] * scale;
                        m[j] = b1 * m[j] + (1.0 - b1) * gj;
                        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        w[j] -= lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
