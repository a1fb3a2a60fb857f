use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{grad_check, GradCheckOptions, ParamGroup, ParamStore};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn nll_value(logits: Tensor, targets: &[TokenId], mask: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits)?;
    let n = task_nll(&mut g, l, targets, mask)?;
    Ok(g.scalar(n))
}

#[test]
fn uniform_logits_give_log_v() {
    let v = 37;
    let got = nll_value(Tensor::zeros(&[4, v]), &[1, 5, 9, 2], &[true; 4]).unwrap();
    assert!((got - (v as f64).ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_logits_approach_zero() {
    let mut t = Tensor::zeros(&[2, 5]);
    t.data_mut()[3] = 60.0;
    t.data_mut()[5 + 1] = 60.0;
    let got = nll_value(t, &[3, 1], &[true, true]).unwrap();
    assert!((0.0..1e-20).contains(&got), "{got}");
}

/// Explicit per-row log-softmax with a max shift.
fn nll_oracle(logits: &Tensor, targets: &[TokenId], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[targets[i] as usize];
        n += 1.0;
    }
    total / n
}

#[test]
fn nll_matches_log_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (t, v) = (rng.random_range(1..6), rng.random_range(2..12));
        let logits = random_matrix(&mut rng, t, v, 5.0);
        let targets: Vec<TokenId> = (0..t).map(|_| rng.random_range(0..v) as TokenId).collect();
        let mut mask: Vec<bool> = (0..t).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        let got = nll_value(logits.clone(), &targets, &mask).unwrap();
        assert!((got - nll_oracle(&logits, &targets, &mask)).abs() <= 1e-12);
    }
}

#[test]
fn masked_positions_do_not_contribute() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = random_matrix(&mut rng, 4, 6, 3.0);
    let mask = [true, true, false, false];
    let targets = [1, 2, 0, 0];
    let base = nll_value(logits.clone(), &targets, &mask).unwrap();
    let mut noisy = logits.clone();
    for v in &mut noisy.data_mut()[12..] {
        *v = 100.0;
    }
    assert_eq!(nll_value(noisy, &targets, &mask).unwrap(), base);

    let mut g = Graph::new();
    let l = g.constant(logits).unwrap();
    let n = task_nll(&mut g, l, &targets, &mask).unwrap();
    let grads = g.backward(n).unwrap();
    assert!(grads.wrt(l).unwrap()[12..].iter().all(|&x| x == 0.0));

    let err = nll_value(Tensor::zeros(&[2, 3]), &[0, 0], &[false, false]).unwrap_err();
    assert!(err.to_string().contains("masked"));
}

#[test]
fn batch_padding_is_masked_out() {
    use crate::datapipe::{formalize_record, synthesize_dataset, Batch, SynthConfig};
    use crate::textcodec::Vocabulary;
    // one complete-label sample and one without a target: the second row block is all padding
    let mut m = synthesize_dataset(&SynthConfig::default(), 4).unwrap();
    m.records[0].meta.emotion = Some(crate::textcodec::Emotion::Joy);
    m.records[0].meta.intensity = Some(1.5);
    let texts: Vec<&str> = m.records.iter().map(|r| r.meta.text.as_str()).collect();
    let v = Vocabulary::build(&texts).unwrap();
    let a = formalize_record(&m.records[0], &v).unwrap();
    let b = formalize_record(&m.records[1], &v).unwrap();
    let batch = Batch::from_inputs(&[&a, &b]).unwrap();
    assert_eq!(batch.target_mask[0], [true; 4]);
    assert_eq!(batch.target_mask[1], [false; 4]);
    let targets: Vec<TokenId> = batch.targets.concat();
    let mask: Vec<bool> = batch.target_mask.concat();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random_matrix(&mut rng, 8, v.len(), 2.0);
    let joint = nll_value(logits.clone(), &targets, &mask).unwrap();
    let first = Tensor::from_rows(&logits.to_rows()[..4]).unwrap();
    let alone = nll_value(first, &batch.targets[0], &batch.target_mask[0]).unwrap();
    assert_eq!(joint, alone);
}

fn cl(anchors: &Tensor, others: &Tensor) -> f64 {
    inter_modal_cl_value(anchors, others, 1.0).unwrap()
}

#[test]
fn equal_scores_give_log_k() {
    let ones = Tensor::filled(&[3, 4], 0.5);
    assert!((cl(&ones, &ones) - 3f64.ln()).abs() <= 1e-9);
    let zeros = Tensor::zeros(&[5, 2]);
    assert!((cl(&zeros, &zeros) - 5f64.ln()).abs() <= 1e-9);
}

#[test]
fn dominant_positive_gives_near_zero() {
    let a = Tensor::from_rows(&[vec![30.0, 0.0], vec![0.0, 30.0]]).unwrap();
    assert!(cl(&a, &a) < 1e-12);
}

#[test]
fn cl_rejects_small_batches_and_bad_temperature() {
    let one = Tensor::zeros(&[1, 3]);
    assert!(inter_modal_cl_value(&one, &one, 1.0).is_err());
    let two = Tensor::zeros(&[2, 3]);
    assert!(inter_modal_cl_value(&two, &two, 0.0).is_err());
    assert!(inter_modal_cl_value(&two, &Tensor::zeros(&[3, 3]), 1.0).is_err());
}

#[test]
fn cl_matches_explicit_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let k = rng.random_range(2..7);
        let d = rng.random_range(1..5);
        let a = random_matrix(&mut rng, k, d, 2.0);
        let o = random_matrix(&mut rng, k, d, 2.0);
        let tau = rng.random_range(0.2..2.0);
        let mut want = 0.0;
        for i in 0..k {
            let s: Vec<f64> = (0..k)
                .map(|j| {
                    a.row(i)
                        .iter()
                        .zip(o.row(j))
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                        / tau
                })
                .collect();
            let neg: f64 = (0..k).filter(|&j| j != i).map(|j| s[j].exp()).sum();
            want += -(s[i].exp() / (s[i].exp() + neg)).ln();
        }
        want /= k as f64;
        assert!((inter_modal_cl_value(&a, &o, tau).unwrap() - want).abs() <= 1e-10);
    }
}

proptest! {
    #[test]
    fn cl_is_positive_and_shift_invariant(seed in any::<u64>(), k in 2usize..7, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, k, d, 3.0);
        let o = random_matrix(&mut rng, k, d, 3.0);
        let base = cl(&a, &o);
        prop_assert!(base > 0.0);
        // an extra coordinate c_i on anchor i and 1 on every other row adds c_i to row i's scores
        let shifts: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let widen = |t: &Tensor, extra: &dyn Fn(usize) -> f64| {
            Tensor::from_rows(&(0..k).map(|i| {
                let mut r = t.row(i).to_vec();
                r.push(extra(i));
                r
            }).collect::<Vec<_>>()).unwrap()
        };
        let a2 = widen(&a, &|i| shifts[i]);
        let o2 = widen(&o, &|_| 1.0);
        prop_assert!((cl(&a2, &o2) - base).abs() <= 1e-9);
    }
}

#[test]
fn total_loss_arithmetic() {
    let b = total_loss(1.0, &[2.0], &[4.0], 0.5, 0.5).unwrap();
    assert_eq!(b.total, 4.0);
    assert_eq!(
        total_loss(1.3, &[2.0, 7.0], &[4.0], 0.0, 0.0)
            .unwrap()
            .total,
        1.3
    );
    assert!(total_loss(1.0, &[], &[], -0.1, 0.5).is_err());
    assert!(total_loss(f64::NAN, &[], &[], 0.5, 0.5).is_err());
    let lin1 = total_loss(1.0, &[2.0], &[4.0], 0.25, 0.5).unwrap().total;
    let lin2 = total_loss(1.0, &[3.0], &[4.0], 0.25, 0.5).unwrap().total;
    assert!((lin2 - lin1 - 0.25).abs() < 1e-15);
}

#[test]
fn graph_total_equals_breakdown_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let task: f64 = rng.random_range(0.0..5.0);
        let ta: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
        let tv: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
        let (alpha, beta) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let b = total_loss(task, &ta, &tv, alpha, beta).unwrap();
        let mut g = Graph::new();
        let t = g.constant(Tensor::scalar(task)).unwrap();
        let ta_v: Vec<Var> = ta
            .iter()
            .map(|&x| g.constant(Tensor::scalar(x)).unwrap())
            .collect();
        let tv_v: Vec<Var> = tv
            .iter()
            .map(|&x| g.constant(Tensor::scalar(x)).unwrap())
            .collect();
        let total = total_loss_graph(&mut g, t, &ta_v, &tv_v, alpha, beta).unwrap();
        assert_eq!(g.scalar(total), b.total);
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let logits = store
        .normal("logits", ParamGroup::Head, &[3, 5], 1.0, &mut rng)
        .unwrap();
    let fa = store
        .normal(
            "anchors",
            ParamGroup::ConvProjection,
            &[3, 4],
            1.0,
            &mut rng,
        )
        .unwrap();
    let xa = store
        .normal(
            "acoustic",
            ParamGroup::ConvProjection,
            &[3, 4],
            1.0,
            &mut rng,
        )
        .unwrap();
    let xv = store
        .normal("visual", ParamGroup::ConvProjection, &[3, 4], 1.0, &mut rng)
        .unwrap();
    let report = grad_check(
        &store,
        |g, s| {
            let l = g.param(s, logits)?;
            let task = task_nll(g, l, &[1, 4, 0], &[true, true, false])?;
            let (f, a, v) = (g.param(s, fa)?, g.param(s, xa)?, g.param(s, xv)?);
            let ta = inter_modal_cl(g, f, a, 0.7)?;
            let tv = inter_modal_cl(g, f, v, 0.7)?;
            total_loss_graph(g, task, &[ta], &[tv], 0.5, 0.5)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst.first());
}

#[test]
fn loss_curve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("loss.tsv");
    let mut w = LossCurveWriter::create(&p).unwrap();
    let b = total_loss(1.0, &[2.0], &[4.0], 0.5, 0.5).unwrap();
    w.write(7, &b).unwrap();
    w.finish().unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text, format!("{LOSS_CURVE_HEADER}\n7\t1\t2\t4\t4\n"));
}
