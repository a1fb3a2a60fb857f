use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(n, sh)| {
            s.normal(n, ParamGroup::FeedForward, sh, 0.7, &mut rng)
                .unwrap()
        })
        .collect();
    (s, ids)
}

fn check_tight(
    store: &ParamStore,
    f: impl Fn(&mut Graph, &ParamStore) -> crate::Result<Var> + Sync,
) {
    let report = grad_check(store, f, &GradCheckOptions::default()).unwrap();
    assert!(
        report.passed(),
        "max rel error {} worst {:?}",
        report.max_rel_error,
        report.worst.first()
    );
}

#[test]
fn matmul_identity_returns_operand() {
    let mut g = Graph::new();
    let a = Tensor::matrix(3, 3, (1..=9).map(f64::from).collect()).unwrap();
    let i = g.constant(Tensor::identity(3)).unwrap();
    let av = g.constant(a.clone()).unwrap();
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out).data(), a.data());
}

#[test]
fn softmax_of_zero_row_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    let y = g.softmax(x, None).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_matches_scalar_hand_oracle() {
    let row = [1.0, 2.0, 3.0];
    let mean = 2.0;
    let var: f64 = (1.0 + 0.0 + 1.0) / 3.0;
    let expected: Vec<f64> = row
        .iter()
        .map(|x| (x - mean) / (var + 1e-5).sqrt())
        .collect();

    let mut g = Graph::new();
    let x = g
        .constant(Tensor::matrix(1, 3, row.to_vec()).unwrap())
        .unwrap();
    let gain = g.constant(Tensor::filled(&[1, 3], 1.0)).unwrap();
    let bias = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    match g.matmul(a, b) {
        Err(Error::Shape { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn non_finite_output_names_op() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0)).unwrap();
    match g.log(x) {
        Err(Error::NonFinite { op }) => assert_eq!(op, "log"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn sum_backward_is_all_ones() {
    let mut g = Graph::new();
    let x = g
        .constant(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap())
        .unwrap();
    let l = g.sum(x).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0; 6]);
}

#[test]
fn sigmoid_derivative_at_zero_is_quarter() {
    let mut g = Graph::new();
    let w = g.constant(Tensor::scalar(0.0)).unwrap();
    let s = g.sigmoid(w).unwrap();
    let l = g.sum(s).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(w).unwrap()[0], 0.25);
}

#[test]
fn square_derivative_at_three_is_six() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(3.0)).unwrap();
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap()[0], 6.0);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_vars() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 2])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Backward(_))));

    let mut other = Graph::new();
    let y = other.constant(Tensor::scalar(1.0)).unwrap();
    // `y` was never evaluated on `g`.
    assert!(matches!(g.backward(y), Err(Error::Backward(_))));
}

#[test]
fn gradcheck_scalar_square() {
    let mut s = ParamStore::new();
    let w = s.constant("w", ParamGroup::Head, &[1, 1], 1.0).unwrap();
    let f = move |g: &mut Graph, st: &ParamStore| {
        let v = g.param(st, w)?;
        g.mul(v, v)
    };
    let mut gr = Graph::new();
    let l = f(&mut gr, &s).unwrap();
    let an = gr.backward(l).unwrap().param_grads(&s)[0].item();
    let opts = GradCheckOptions::default();
    let r = grad_check(&s, f, &opts).unwrap();
    assert_eq!(an, 2.0);
    assert!((r.worst[0].numeric - 2.0).abs() < 1e-6);
    assert!(r.passed());
}

#[test]
fn softmax_nll_gradient_is_p_minus_one_on_true_class() {
    let logits = vec![0.3, -1.2, 2.0, 0.1];
    let target = 2;
    let mut g = Graph::new();
    let x = g
        .constant(Tensor::matrix(1, 4, logits.clone()).unwrap())
        .unwrap();
    let lp = g.log_softmax(x).unwrap();
    let picked = g.pick_cols(lp, &[target]).unwrap();
    let nll = g.scale(picked, -1.0).unwrap();
    let grads = g.backward(nll).unwrap();
    let lse = log_sum_exp(&logits);
    for (j, gv) in grads.wrt(x).unwrap().iter().enumerate() {
        let p = (logits[j] - lse).exp();
        let expected = if j == target { p - 1.0 } else { p };
        assert!((gv - expected).abs() < 1e-14);
    }
}

#[test]
fn gradcheck_every_primitive() {
    let (s, ids) = store_with(
        &[
            ("a", &[3, 4]),
            ("b", &[4, 5]),
            ("c", &[3, 5]),
            ("row", &[1, 5]),
            ("gain", &[1, 5]),
            ("bias", &[1, 5]),
            ("w", &[2 * 5, 3]),
            ("cb", &[1, 3]),
            ("table", &[6, 5]),
            ("pos", &[3, 5]),
        ],
        11,
    );
    let f = move |g: &mut Graph, st: &ParamStore| {
        let p: Vec<Var> = ids
            .iter()
            .map(|&i| g.param(st, i))
            .collect::<crate::Result<_>>()?;
        let ab = g.matmul(p[0], p[1])?;
        let t = g.tanh(ab)?;
        let m = g.mul(t, p[2])?;
        let s1 = g.add_row(m, p[3])?;
        let sg = g.sigmoid(s1)?;
        let ge = g.gelu(s1)?;
        let sum = g.add(sg, ge)?;
        let ln = g.layer_norm(sum, p[4], p[5], LAYER_NORM_EPS)?;
        let conv = g.conv1d(ln, p[6], p[7], 2)?;
        let sm = g.softmax(
            conv,
            Some(&[true, true, false, true, true, true, true, false, true]),
        )?;
        let lsm = g.log_softmax(conv)?;
        let pk = g.pick_cols(lsm, &[0, 2, 1])?;
        let emb = g.embedding(p[8], &[1, 4, 1])?;
        let e2 = g.add(emb, p[9])?;
        let attn = g.matmul_t(e2, ln)?;
        let tr = g.transpose(attn)?;
        let cc = g.concat_cols(&[tr, sm])?;
        let cr = g.concat_rows(&[cc, cc])?;
        let sl = g.slice_rows(cr, 1, 4)?;
        let sc = g.slice_cols(sl, 2, 3)?;
        let rs = g.resize_rows(sc, 6)?;
        let mr = g.mean_rows(rs)?;
        let br = g.broadcast_rows(mr, 2)?;
        let ex = g.exp(br)?;
        let lg = g.log(ex)?;
        let sq = g.mul(lg, lg)?;
        let sub = g.sub(sq, br)?;
        let a1 = g.sum(sub)?;
        let a2 = g.sum(pk)?;
        let a2 = g.scale(a2, 0.3)?;
        let tot = g.add(a1, a2)?;
        Ok(tot)
    };
    check_tight(&s, f);
}

#[test]
fn gradients_accumulate_across_fan_out() {
    let mut s = ParamStore::new();
    let w = s.constant("w", ParamGroup::Head, &[1, 2], 1.5).unwrap();
    let mut g = Graph::new();
    let a = g.param(&s, w).unwrap();
    let b = g.param(&s, w).unwrap();
    assert_eq!(a, b);
    let y = g.add(a, b).unwrap();
    let y = g.add(y, a).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap().param_grads(&s);
    assert_eq!(grads[0].data(), &[3.0, 3.0]);
}

#[test]
fn masked_softmax_gives_exact_zero_and_zero_gradient() {
    let mut g = Graph::new();
    let x = g
        .constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 50.0]).unwrap())
        .unwrap();
    let y = g.softmax(x, Some(&[true, true, false])).unwrap();
    assert_eq!(g.value(y).data()[2], 0.0);
    let w = g
        .constant(Tensor::matrix(1, 3, vec![1.0, -1.0, 3.0]).unwrap())
        .unwrap();
    let prod = g.mul(y, w).unwrap();
    let l = g.sum(prod).unwrap();
    assert_eq!(g.backward(l).unwrap().wrt(x).unwrap()[2], 0.0);
}

#[test]
fn dropout_is_identity_unless_enabled_and_seeded() {
    let run = |seed| {
        let mut g = Graph::new().with_dropout(0.5, seed);
        let x = g.constant(Tensor::filled(&[4, 4], 1.0)).unwrap();
        let y = g.dropout(x).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(3), run(3));
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled(&[2, 2], 1.0)).unwrap();
    assert_eq!(g.dropout(x).unwrap(), x);
}

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, rows * cols)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in finite_matrix(3, 5)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 5, data).unwrap()).unwrap();
        let y = g.softmax(x, None).unwrap();
        for r in 0..3 {
            let row = g.value(y).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(data in finite_matrix(4, 6)) {
        prop_assume!((0..4).all(|r| {
            let row = &data[r * 6..(r + 1) * 6];
            let m = row.iter().sum::<f64>() / 6.0;
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 6.0 > 20.0
        }));
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(4, 6, data).unwrap()).unwrap();
        let gain = g.constant(Tensor::filled(&[1, 6], 1.0)).unwrap();
        let bias = g.constant(Tensor::zeros(&[1, 6])).unwrap();
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for r in 0..4 {
            let row = g.value(y).row(r);
            let m = row.iter().sum::<f64>() / 6.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            prop_assert!(m.abs() <= 1e-9);
            prop_assert!((v - 1.0).abs() <= 1e-6, "variance {v}");
        }
    }

    #[test]
    fn random_graphs_pass_gradcheck(seed in 0u64..1000) {
        let (s, ids) = store_with(&[("x", &[3, 4]), ("w", &[4, 4]), ("g", &[1, 4]), ("b", &[1, 4])], seed);
        let f = move |g: &mut Graph, st: &ParamStore| {
            let p: Vec<Var> = ids.iter().map(|&i| g.param(st, i)).collect::<crate::Result<_>>()?;
            let h = g.matmul(p[0], p[1])?;
            let h = g.layer_norm(h, p[2], p[3], LAYER_NORM_EPS)?;
            let a = g.softmax(h, None)?;
            let t = g.tanh(h)?;
            let m = g.mul(a, t)?;
            let c = g.conv1d(m, p[1], p[3], 1)?;
            let lp = g.log_softmax(c)?;
            let pk = g.pick_cols(lp, &[0, 1, 3])?;
            g.sum(pk)
        };
        let r = grad_check(&s, f, &GradCheckOptions::default()).unwrap();
        prop_assert!(r.passed(), "max rel err {}", r.max_rel_error);
    }

    #[test]
    fn evaluation_is_bit_deterministic(data in finite_matrix(2, 3)) {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(2, 3, data.clone()).unwrap()).unwrap();
            let y = g.matmul_t(x, x).unwrap();
            let y = g.softmax(y, None).unwrap();
            g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
