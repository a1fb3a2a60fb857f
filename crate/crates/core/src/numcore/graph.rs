//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation evaluates eagerly, appends a node to the tape and checks
//! its output for non-finite values. Because nodes are only ever appended
//! after their inputs, tape order is a valid topological order and the
//! backward sweep visits each node exactly once in reverse.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        pad_left: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ResizeRows(Var),
    BroadcastRows(Var),
    MeanRows(Var),
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    PickCols {
        x: Var,
        cols: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of evaluated nodes. One graph per forward pass; graphs are not
/// shared across threads.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    node_params: HashMap<usize, ParamId>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mat_shape(t: &Tensor) -> Vec<usize> {
    vec![t.rows(), t.cols()]
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            node_params: HashMap::new(),
            dropout: None,
        }
    }

    /// Enables inverted dropout with the given rate, seeded deterministically.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            self.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Backward(
                "variable does not belong to this graph".into(),
            ));
        }
        Ok(&self.nodes[v.idx].value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable from another graph");
        &self.nodes[v.idx].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let idx = self.nodes.len();
        self.nodes.push(Node { value, op });
        Ok(Var {
            graph: self.id,
            idx,
        })
    }

    /// Non-differentiable input or constant.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// Binds a parameter as a leaf. Repeated calls return the same node so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let v = self.push("param", store.value(id).clone(), Op::Leaf)?;
        self.param_nodes.insert(id, v);
        self.node_params.insert(v.idx, id);
        Ok(v)
    }

    fn binary_same(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor, &Tensor)> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(Error::Shape {
                op,
                lhs: mat_shape(ta),
                rhs: mat_shape(tb),
            });
        }
        Ok((ta, tb))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(Error::Shape {
                op: "matmul",
                lhs: mat_shape(ta),
                rhs: mat_shape(tb),
            });
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * c..(p + 1) * c];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push("matmul", Tensor::matrix(r, c, out)?, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (r, k, c) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: mat_shape(ta),
                rhs: mat_shape(tb),
            });
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let arow = ta.row(i);
            for j in 0..c {
                out.push(dot(arow, tb.row(j)));
            }
        }
        self.push("matmul_t", Tensor::matrix(r, c, out)?, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.check(a)?;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        self.push("transpose", Tensor::matrix(c, r, out)?, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("add", a, b)?;
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), out)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("sub", a, b)?;
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), out)?;
        self.push("sub", t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("mul", a, b)?;
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), out)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.check(a)?, self.check(row)?);
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: mat_shape(ta),
                rhs: mat_shape(tr),
            });
        }
        let c = ta.cols();
        let rd = tr.data();
        let out = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + rd[i % c])
            .collect();
        let t = Tensor::matrix(ta.rows(), c, out)?;
        self.push("add_row", t, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.check(a)?;
        let t = Tensor::matrix(
            ta.rows(),
            ta.cols(),
            ta.data().iter().map(|x| x * s).collect(),
        )?;
        self.push("scale", t, Op::Scale(a, s))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.check(a)?;
        let t = Tensor::matrix(
            ta.rows(),
            ta.cols(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )?;
        self.push(name, t, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "gelu",
            a,
            |x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    /// Row-wise softmax. Entries where `mask` is `false` get exactly zero
    /// weight; a fully masked row yields all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.check(a)?;
        let (r, c) = (ta.rows(), ta.cols());
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape {
                    op: "softmax",
                    lhs: vec![r, c],
                    rhs: vec![m.len()],
                });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= total;
            }
        }
        self.push("softmax", Tensor::matrix(r, c, out)?, Op::Softmax(a))
    }

    /// Row-wise log-softmax via a max-shifted log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.check(a)?;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = ta.row(i);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        self.push("log_softmax", Tensor::matrix(r, c, out)?, Op::LogSoftmax(a))
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (r, c) = (tx.rows(), tx.cols());
        for t in [tg, tb] {
            if t.rows() != 1 || t.cols() != c {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: vec![r, c],
                    rhs: mat_shape(t),
                });
            }
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Temporal convolution over rows of `x` (`L × c_in`). `weight` is
    /// `(kernel · c_in) × c_out`, indexed by tap-major then input channel;
    /// `bias` is `1 × c_out`. Zero padding keeps the output length at `L`:
    /// `(kernel - 1) / 2` rows on the left, the rest on the right.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, kernel: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.check(x)?, self.check(weight)?, self.check(bias)?);
        let (len, cin) = (tx.rows(), tx.cols());
        let cout = tw.cols();
        if kernel == 0 || tw.rows() != kernel * cin || tb.rows() != 1 || tb.cols() != cout {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: vec![len, cin, kernel],
                rhs: mat_shape(tw),
            });
        }
        let pad_left = (kernel - 1) / 2;
        let wd = tw.data();
        let mut out = Vec::with_capacity(len * cout);
        for t in 0..len {
            let mut acc = tb.data().to_vec();
            for j in 0..kernel {
                let src = t as isize + j as isize - pad_left as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let xrow = tx.row(src as usize);
                for (i, &xv) in xrow.iter().enumerate() {
                    let wrow = &wd[(j * cin + i) * cout..(j * cin + i + 1) * cout];
                    for (a, &w) in acc.iter_mut().zip(wrow) {
                        *a += xv * w;
                    }
                }
            }
            out.extend(acc);
        }
        let t = Tensor::matrix(len, cout, out)?;
        self.push(
            "conv1d",
            t,
            Op::Conv1d {
                x,
                weight,
                bias,
                kernel,
                pad_left,
            },
        )
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.check(
            *parts
                .first()
                .ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?,
        )?;
        let r = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.check(p)?;
            if t.rows() != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: mat_shape(first),
                    rhs: mat_shape(t),
                });
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.idx].value.row(i));
            }
        }
        let t = Tensor::matrix(r, total, out)?;
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()))
    }

    /// Concatenation along the row (time/batch) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.check(
            *parts
                .first()
                .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?,
        )?;
        let c = first.cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.cols() != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: mat_shape(first),
                    rhs: mat_shape(t),
                });
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows, c, out)?;
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.check(x)?;
        if len == 0 || start + len > tx.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: mat_shape(tx),
                rhs: vec![start, len],
            });
        }
        let c = tx.cols();
        let t = Tensor::matrix(len, c, tx.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", t, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.check(x)?;
        if len == 0 || start + len > tx.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: mat_shape(tx),
                rhs: vec![start, len],
            });
        }
        let out = (0..tx.rows())
            .flat_map(|i| tx.row(i)[start..start + len].iter().copied())
            .collect();
        let t = Tensor::matrix(tx.rows(), len, out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start })
    }

    /// Truncates to, or zero-pads up to, exactly `len` rows.
    pub fn resize_rows(&mut self, x: Var, len: usize) -> Result<Var> {
        let tx = self.check(x)?;
        if len == 0 {
            return Err(Error::invalid("resize_rows", "target length must be >= 1"));
        }
        let c = tx.cols();
        let keep = tx.rows().min(len);
        let mut out = tx.data()[..keep * c].to_vec();
        out.resize(len * c, 0.0);
        let t = Tensor::matrix(len, c, out)?;
        self.push("resize_rows", t, Op::ResizeRows(x))
    }

    /// Replicates a `1 × c` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let tx = self.check(x)?;
        if tx.rows() != 1 || n == 0 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: mat_shape(tx),
                rhs: vec![n],
            });
        }
        let t = Tensor::matrix(n, tx.cols(), tx.data().repeat(n))?;
        self.push("broadcast_rows", t, Op::BroadcastRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.check(x)?;
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(tx.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push("mean_rows", Tensor::matrix(1, c, out)?, Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.check(table)?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding", "empty id sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tt.rows()) {
            return Err(Error::Shape {
                op: "embedding",
                lhs: mat_shape(tt),
                rhs: vec![bad],
            });
        }
        let c = tt.cols();
        let out = ids
            .iter()
            .flat_map(|&i| tt.row(i).iter().copied())
            .collect();
        let t = Tensor::matrix(ids.len(), c, out)?;
        self.push(
            "embedding",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Picks `x[i, cols[i]]` for every row, producing an `r × 1` column.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.check(x)?;
        if cols.len() != tx.rows() || cols.iter().any(|&c| c >= tx.cols()) {
            return Err(Error::Shape {
                op: "pick_cols",
                lhs: mat_shape(tx),
                rhs: vec![cols.len()],
            });
        }
        let out = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| tx.get(i, c))
            .collect();
        let t = Tensor::matrix(cols.len(), 1, out)?;
        self.push(
            "pick_cols",
            t,
            Op::PickCols {
                x,
                cols: cols.to_vec(),
            },
        )
    }

    /// Inverted dropout; identity unless enabled with [`Graph::with_dropout`].
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let rate = *rate;
        let n = self.nodes[x.idx].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    1.0 / (1.0 - rate)
                }
            })
            .collect();
        let tx = self.check(x)?;
        let out = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::matrix(tx.rows(), tx.cols(), out)?;
        self.push("dropout", t, Op::Dropout { x, mask })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.check(loss)?;
        if !lt.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.idx] = Some(vec![1.0]);
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
            params: self.node_params.clone(),
        })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (r, c) = (out.rows(), out.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let k = ta.cols();
                accumulate(grads, self.val(*a).numel(), *a, |ga| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, tb.row(p));
                        }
                    }
                });
                accumulate(grads, tb.numel(), *b, |gb| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let k = ta.cols();
                accumulate(grads, ta.numel(), *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            let gij = g[i * c + j];
                            for (o, bv) in ga[i * k..(i + 1) * k].iter_mut().zip(tb.row(j)) {
                                *o += gij * bv;
                            }
                        }
                    }
                });
                accumulate(grads, tb.numel(), *b, |gb| {
                    for i in 0..r {
                        let arow = ta.row(i);
                        for j in 0..c {
                            let gij = g[i * c + j];
                            for (o, av) in gb[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *o += gij * av;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                // input is c × r
                accumulate(grads, r * c, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, g.len(), *a, |ga| add_into(ga, g));
                accumulate(grads, g.len(), *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                accumulate(grads, g.len(), *a, |ga| add_into(ga, g));
                accumulate(grads, g.len(), *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v)
                });
            }
            Op::AddRow(a, row) => {
                accumulate(grads, g.len(), *a, |ga| add_into(ga, g));
                accumulate(grads, c, *row, |gr| {
                    for i in 0..r {
                        add_into(gr, &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                accumulate(grads, g.len(), *a, |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += gv * bv;
                    }
                });
                accumulate(grads, g.len(), *b, |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => {
                accumulate(grads, g.len(), *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v * s)
                });
            }
            Op::Sigmoid(a) => {
                elementwise_grad(grads, *a, g, out.data(), |_, y| y * (1.0 - y), self)
            }
            Op::Tanh(a) => elementwise_grad(grads, *a, g, out.data(), |_, y| 1.0 - y * y, self),
            Op::Exp(a) => elementwise_grad(grads, *a, g, out.data(), |_, y| y, self),
            Op::Log(a) => elementwise_grad(grads, *a, g, out.data(), |x, _| 1.0 / x, self),
            Op::Gelu(a) => elementwise_grad(
                grads,
                *a,
                g,
                out.data(),
                |x, _| {
                    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
                },
                self,
            ),
            Op::Softmax(a) => {
                let y = out.data();
                accumulate(grads, g.len(), *a, |ga| {
                    for i in 0..r {
                        let s = i * c..(i + 1) * c;
                        let inner = dot(&g[s.clone()], &y[s.clone()]);
                        for j in s {
                            ga[j] += y[j] * (g[j] - inner);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = out.data();
                accumulate(grads, g.len(), *a, |ga| {
                    for i in 0..r {
                        let s = i * c..(i + 1) * c;
                        let gsum: f64 = g[s.clone()].iter().sum();
                        for j in s {
                            ga[j] += g[j] - y[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let tg = self.val(*gain).data();
                accumulate(grads, g.len(), *x, |gx| {
                    for i in 0..r {
                        let s = i * c..(i + 1) * c;
                        let gh: Vec<f64> =
                            g[s.clone()].iter().zip(tg).map(|(a, b)| a * b).collect();
                        let mean_gh = gh.iter().sum::<f64>() / c as f64;
                        let mean_ghx = dot(&gh, &xhat[s.clone()]) / c as f64;
                        for (j, o) in gx[s.clone()].iter_mut().enumerate() {
                            *o += rstd[i] * (gh[j] - mean_gh - xhat[i * c + j] * mean_ghx);
                        }
                    }
                });
                accumulate(grads, c, *gain, |gg| {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                accumulate(grads, c, *bias, |gb| {
                    for i in 0..r {
                        add_into(gb, &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::Conv1d {
                x,
                weight,
                bias,
                kernel,
                pad_left,
            } => {
                let (tx, tw) = (self.val(*x), self.val(*weight));
                let (len, cin, cout) = (tx.rows(), tx.cols(), c);
                let taps = |t: usize| {
                    (0..*kernel).filter_map(move |j| {
                        let src = t as isize + j as isize - *pad_left as isize;
                        (src >= 0 && (src as usize) < len).then_some((j, src as usize))
                    })
                };
                accumulate(grads, tx.numel(), *x, |gx| {
                    for t in 0..len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for (j, src) in taps(t) {
                            for i in 0..cin {
                                let wrow =
                                    &tw.data()[(j * cin + i) * cout..(j * cin + i + 1) * cout];
                                gx[src * cin + i] += dot(grow, wrow);
                            }
                        }
                    }
                });
                accumulate(grads, tw.numel(), *weight, |gw| {
                    for t in 0..len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for (j, src) in taps(t) {
                            for (i, &xv) in tx.row(src).iter().enumerate() {
                                let base = (j * cin + i) * cout;
                                for (o, gv) in gw[base..base + cout].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                });
                accumulate(grads, cout, *bias, |gb| {
                    for t in 0..len {
                        add_into(gb, &g[t * cout..(t + 1) * cout]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).cols();
                    accumulate(grads, r * w, p, |gp| {
                        for i in 0..r {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &g[i * c + offset..i * c + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).numel();
                    accumulate(grads, n, p, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.val(*x).numel();
                accumulate(grads, n, *x, |gx| {
                    add_into(&mut gx[start * c..(start + r) * c], g)
                });
            }
            Op::SliceCols { x, start } => {
                let tx = self.val(*x);
                let xc = tx.cols();
                accumulate(grads, tx.numel(), *x, |gx| {
                    for i in 0..r {
                        add_into(
                            &mut gx[i * xc + start..i * xc + start + c],
                            &g[i * c..(i + 1) * c],
                        );
                    }
                });
            }
            Op::ResizeRows(x) => {
                let tx = self.val(*x);
                let keep = tx.rows().min(r);
                accumulate(grads, tx.numel(), *x, |gx| {
                    add_into(&mut gx[..keep * c], &g[..keep * c])
                });
            }
            Op::BroadcastRows(x) => {
                accumulate(grads, c, *x, |gx| {
                    for i in 0..r {
                        add_into(gx, &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::MeanRows(x) => {
                let tx = self.val(*x);
                let n = tx.rows();
                accumulate(grads, tx.numel(), *x, |gx| {
                    for i in 0..n {
                        for (o, gv) in gx[i * c..(i + 1) * c].iter_mut().zip(g) {
                            *o += gv / n as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let n = self.val(*x).numel();
                accumulate(grads, n, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Embedding { table, ids } => {
                let n = self.val(*table).numel();
                accumulate(grads, n, *table, |gt| {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::PickCols { x, cols } => {
                let tx = self.val(*x);
                let xc = tx.cols();
                accumulate(grads, tx.numel(), *x, |gx| {
                    for (i, &col) in cols.iter().enumerate() {
                        gx[i * xc + col] += g[i];
                    }
                });
            }
            Op::Dropout { x, mask } => {
                accumulate(grads, g.len(), *x, |gx| {
                    for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += gv * m;
                    }
                });
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], n: usize, v: Var, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.idx].get_or_insert_with(|| vec![0.0; n]);
    f(slot);
}

fn elementwise_grad(
    grads: &mut [Option<Vec<f64>>],
    a: Var,
    g: &[f64],
    y: &[f64],
    d: impl Fn(f64, f64) -> f64,
    graph: &Graph,
) {
    let x = graph.val(a).data();
    accumulate(grads, g.len(), a, |ga| {
        for i in 0..g.len() {
            ga[i] += g[i] * d(x[i], y[i]);
        }
    });
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<usize, ParamId>,
}

impl Gradients {
    /// Gradient with respect to a node; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Gradient of every parameter bound in the graph, zero-filled for
    /// parameters the loss does not reach.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        for (&idx, &pid) in &self.params {
            if let Some(g) = &self.grads[idx] {
                out[pid.0].data_mut().copy_from_slice(g);
            }
        }
        out
    }
}
