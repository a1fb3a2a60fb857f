use crate::error::{Error, Result};
use crate::numcore::{Graph, Var, LAYER_NORM_EPS};

pub struct LayerNormVars {
    pub gain: Var,
    pub bias: Var,
}

pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNormVars) -> Result<Var> {
    g.layer_norm(x, p.gain, p.bias, LAYER_NORM_EPS)
}

pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Multi-head scaled dot-product attention of `query` rows over `memory`
/// rows. `mask[i * m + j]` is `false` where row `i` may not attend to `j`.
pub fn attention(
    g: &mut Graph,
    query: Var,
    memory: Var,
    p: &AttentionVars,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let q = g.matmul(query, p.wq)?;
    let k = g.matmul(memory, p.wk)?;
    let v = g.matmul(memory, p.wv)?;
    let d = g.value(q).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::invalid(
            "attention",
            format!("width {d} not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let s = g.matmul_t(qh, kh)?;
        let s = g.scale(s, scale)?;
        let a = g.softmax(s, mask)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    g.matmul(cat, p.wo)
}

/// Key mask: every query row may attend to the first `valid` of `m` keys.
pub fn key_mask(rows: usize, m: usize, valid: usize) -> Vec<bool> {
    (0..rows)
        .flat_map(|_| (0..m).map(move |j| j < valid))
        .collect()
}

/// Lower-triangular mask for decoder self-attention.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect()
}

pub struct FeedForwardVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub fn feed_forward(g: &mut Graph, x: Var, p: &FeedForwardVars) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_row(h, p.b1)?;
    let h = g.gelu(h)?;
    let h = g.dropout(h)?;
    let o = g.matmul(h, p.w2)?;
    g.add_row(o, p.b2)
}

pub struct LstmVars {
    /// `(d_in + d_h) × 4 d_h`, gate blocks ordered input, forget, cell, output.
    pub w: Var,
    pub b: Var,
}

/// Single-layer LSTM over the first `len` rows of `x`, from zero state.
/// Returns the state sequence (`len × d_h`) and the state at step `len`.
pub fn lstm(g: &mut Graph, x: Var, len: usize, p: &LstmVars) -> Result<(Var, Var)> {
    let (rows, d_in) = (g.value(x).rows(), g.value(x).cols());
    if len == 0 || len > rows {
        return Err(Error::invalid(
            "lstm",
            format!("sequence length {len} of {rows} rows"),
        ));
    }
    let w = g.value(p.w);
    let d_h = w.cols() / 4;
    if w.cols() != 4 * d_h || w.rows() != d_in + d_h {
        return Err(Error::Shape {
            op: "lstm",
            lhs: vec![rows, d_in],
            rhs: vec![w.rows(), w.cols()],
        });
    }
    let mut h = g.constant(crate::numcore::Tensor::zeros(&[1, d_h]))?;
    let mut c = h;
    let mut states = Vec::with_capacity(len);
    for t in 0..len {
        let xt = g.slice_rows(x, t, 1)?;
        let z = g.concat_cols(&[xt, h])?;
        let z = g.matmul(z, p.w)?;
        let z = g.add_row(z, p.b)?;
        let i = g.slice_cols(z, 0, d_h)?;
        let i = g.sigmoid(i)?;
        let f = g.slice_cols(z, d_h, d_h)?;
        let f = g.sigmoid(f)?;
        let cc = g.slice_cols(z, 2 * d_h, d_h)?;
        let cc = g.tanh(cc)?;
        let o = g.slice_cols(z, 3 * d_h, d_h)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cc)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        h = g.mul(o, tc)?;
        states.push(h);
    }
    let seq = if len == 1 { h } else { g.concat_rows(&states)? };
    Ok((seq, h))
}

pub struct PmfVars {
    pub wd: Var,
    pub bd: Var,
    pub wu: Var,
    pub bu: Var,
    pub w: Var,
}

fn expect_shape(g: &Graph, v: Var, rows: usize, cols: usize, op: &'static str) -> Result<()> {
    let t = g.value(v);
    if t.rows() != rows || t.cols() != cols {
        return Err(Error::Shape {
            op,
            lhs: vec![t.rows(), t.cols()],
            rhs: vec![rows, cols],
        });
    }
    Ok(())
}

/// Fusion adapter. The acoustic and visual summaries are replicated over the
/// text rows and concatenated on the feature axis:
/// `F = [F_prev, a, v]`, `F_u = W_u σ(W_d F + b_d) + b_u`, output `W (F_u + F_prev)`.
pub fn pmf_fuse(g: &mut Graph, f_prev: Var, a_last: Var, v_last: Var, p: &PmfVars) -> Result<Var> {
    let (l, d_t) = (g.value(f_prev).rows(), g.value(f_prev).cols());
    let d_a = g.value(a_last).cols();
    let d_v = g.value(v_last).cols();
    let bn = g.value(p.wd).cols();
    expect_shape(g, a_last, 1, d_a, "pmf acoustic summary")?;
    expect_shape(g, v_last, 1, d_v, "pmf visual summary")?;
    expect_shape(g, p.wd, d_t + d_a + d_v, bn, "pmf down-projection W_d")?;
    expect_shape(g, p.bd, 1, bn, "pmf down-projection bias b_d")?;
    expect_shape(g, p.wu, bn, d_t, "pmf up-projection W_u")?;
    expect_shape(g, p.bu, 1, d_t, "pmf up-projection bias b_u")?;
    expect_shape(g, p.w, d_t, d_t, "pmf output map W")?;
    let a = g.broadcast_rows(a_last, l)?;
    let v = g.broadcast_rows(v_last, l)?;
    let f = g.concat_cols(&[f_prev, a, v])?;
    let fd = g.matmul(f, p.wd)?;
    let fd = g.add_row(fd, p.bd)?;
    let fd = g.sigmoid(fd)?;
    let fu = g.matmul(fd, p.wu)?;
    let fu = g.add_row(fu, p.bu)?;
    let s = g.add(fu, f_prev)?;
    g.matmul(s, p.w)
}

pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub kernel: usize,
}

/// Temporal convolution to the common width, length adjustment to `l_c`
/// rows, then a mean over time.
pub fn project(g: &mut Graph, x: Var, p: &ConvVars, l_c: usize) -> Result<Var> {
    if l_c == 0 {
        return Err(Error::Config("common length l_c must be >= 1".into()));
    }
    let y = g.conv1d(x, p.weight, p.bias, p.kernel)?;
    let y = g.resize_rows(y, l_c)?;
    g.mean_rows(y)
}
