//! Acceptance runs. Each criterion prints one PASS or FAIL line and the
//! process exits nonzero if any failed. Names given on the command line
//! (e.g. `cargo test --test acceptance -- codec metrics`) select a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unimse::cli::{
    cmd_gradcheck, cmd_train, generate_all, score_generations, training_manifest, RunConfig,
};
use unimse::datapipe::{formalize_split, Split};
use unimse::evalmetrics::{erc_metrics, msa_metrics};
use unimse::model::{Model, Preset};
use unimse::numcore::{ParamGroup, Tensor};
use unimse::objectives::inter_modal_cl_value;
use unimse::textcodec::{
    decode_prediction, parse_ul, serialize_ul, Emotion, Intensity, Polarity, Provenance, Task,
    TaskValue, UniversalLabel, Vocabulary,
};
use unimse::train::{exact_match, train, DropModality, Seeds};
use unimse::unilabel::{complete_universal_label, BowCosine, CompletionOptions, LabeledSample};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn desk(out: &Path) -> RunConfig {
    let mut run = RunConfig::preset(Preset::Desk);
    run.out_dir = out.display().to_string();
    run
}

fn gradient_fidelity(tmp: &Path) -> Outcome {
    let t0 = Instant::now();
    let run = desk(tmp);
    ensure(
        (
            run.d_t,
            run.enc_layers,
            run.dec_layers,
            run.n_f,
            run.n_cl,
            run.gradcheck_batch,
        ) == (32, 2, 2, 2, 2, 4),
        || "desk preset does not have the expected shape".into(),
    )?;
    let r = cmd_gradcheck(&run).map_err(fail)?;
    let secs = t0.elapsed().as_secs_f64();
    for g in ParamGroup::ALL {
        let covered = r.groups.iter().any(|s| s.group == g && s.coords > 0);
        ensure(covered, || format!("group {g} not checked"))?;
    }
    let detail = format!(
        "max rel {:.2e} over {} coordinates, {secs:.0} s",
        r.max_rel_error, r.checked
    );
    ensure(r.passed() && r.max_rel_error <= 1e-4, || {
        format!("{detail}; {} above tol", r.failures.len())
    })?;
    ensure(secs < 300.0, || format!("{detail}: too slow"))?;
    Ok(detail)
}

fn overfit(tmp: &Path) -> Outcome {
    let t0 = Instant::now();
    let mut run = desk(tmp);
    (run.synth_msa_train, run.synth_msa_valid, run.synth_msa_test) = (32, 0, 0);
    (run.synth_erc_train, run.synth_erc_valid, run.synth_erc_test) = (32, 0, 0);
    run.epochs = 300;
    run.eval_every = 10;
    let m = training_manifest(&run).map_err(fail)?;
    let vocab = Vocabulary::build(&m.corpus()).map_err(fail)?;
    let inputs = formalize_split(&m, Some(Split::Train), &vocab).map_err(fail)?;
    ensure(inputs.len() == 64, || {
        format!("{} training samples", inputs.len())
    })?;
    let mut mc = run.model_config();
    mc.vocab_size = vocab.len();
    let mut model = Model::new(mc.clone(), Seeds::derive(run.seed).init).map_err(fail)?;
    let cfg = run.train_config().map_err(fail)?;
    let outcome = train(&mut model, &inputs, &inputs, &cfg, None).map_err(fail)?;
    let first = outcome
        .validation
        .iter()
        .find(|(_, r)| *r >= 0.95)
        .map(|(e, _)| *e);
    let Some(first) = first else {
        let top = outcome.validation.iter().map(|v| v.1).fold(0.0, f64::max);
        return Err(format!("best exact-match {top:.3} after 300 epochs"));
    };
    let (_, _, params) = outcome.best.ok_or("no validation pass")?;
    let best = Model::from_params(mc, params).map_err(fail)?;
    let em = exact_match(&best, &inputs, DropModality::None).map_err(fail)?;
    let gens = generate_all(&best, &inputs).map_err(fail)?;
    let scored = score_generations(&inputs, &gens, &vocab, Some(Task::Msa)).map_err(fail)?;
    let mae = scored.reports[0].get("mae").ok_or("no MAE")?;
    let secs = t0.elapsed().as_secs_f64();
    let detail =
        format!("exact-match {em:.3} (>= 0.95 from epoch {first}), MSA MAE {mae:.3}, {secs:.0} s");
    ensure(em >= 0.95 && mae <= 0.05 && secs < 600.0, || detail.clone())?;
    Ok(detail)
}

fn codec(_: &Path) -> Outcome {
    let t0 = Instant::now();
    let vocab = Vocabulary::build(&["word"]).map_err(fail)?;
    let mut n = 0;
    for p in Polarity::ALL {
        for tenths in -30i8..=30 {
            let i = Intensity::from_tenths(tenths).map_err(fail)?;
            for e in Emotion::ALL {
                let label = UniversalLabel {
                    polarity: p,
                    intensity: Some(i),
                    emotion: Some(e),
                    intensity_source: Provenance::Original,
                    emotion_source: Provenance::Original,
                };
                let seq = serialize_ul(&label).map_err(fail)?;
                let msa = decode_prediction(&seq, Task::Msa, &vocab, false).map_err(fail)?;
                let erc = decode_prediction(&seq, Task::Erc, &vocab, false).map_err(fail)?;
                ensure(
                    msa.value == TaskValue::Intensity(f64::from(tenths) / 10.0),
                    || format!("{label:?} intensity"),
                )?;
                ensure(erc.value == TaskValue::Emotion(e), || {
                    format!("{label:?} emotion")
                })?;
                ensure(parse_ul(&seq, &vocab) == Some((p, i, e)), || {
                    format!("{label:?} full parse")
                })?;
                n += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(n == 61 * 3 * Emotion::ALL.len() && secs < 1.0, || {
        format!("{n} labels in {secs:.3} s")
    })?;
    Ok(format!("{n} labels round-trip in {:.1} ms", secs * 1e3))
}

const WORDS: [&str; 10] = [
    "good", "bad", "movie", "plot", "great", "sad", "really", "the", "acting", "slow",
];

fn cosine(a: &str, b: &str) -> f64 {
    let mut words: Vec<&str> = a.split_whitespace().chain(b.split_whitespace()).collect();
    words.sort_unstable();
    words.dedup();
    let count = |t: &str| -> Vec<f64> {
        words
            .iter()
            .map(|w| t.split_whitespace().filter(|x| x == w).count() as f64)
            .collect()
    };
    let (x, y) = (count(a), count(b));
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    let norm = |v: &[f64]| v.iter().map(|p| p * p).sum::<f64>().sqrt();
    dot / (norm(&x) * norm(&y))
}

fn valence(s: &LabeledSample) -> i32 {
    match s.task {
        Task::Msa => {
            let t = (s.intensity.unwrap() * 10.0).round() as i32;
            t.signum()
        }
        Task::Erc => match s.emotion.unwrap() {
            Emotion::Joy | Emotion::Excited | Emotion::Surprise => 1,
            Emotion::Neutral => 0,
            _ => -1,
        },
    }
}

fn completion(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut samples = Vec::new();
    for i in 0..100 {
        let n = rng.random_range(1..6);
        let text: Vec<&str> = (0..n).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let text = text.join(" ");
        // the first pair guarantees a neutral donor on both sides
        samples.push(if i % 2 == 0 {
            let tenths = if i == 0 {
                0
            } else {
                rng.random_range(-30..=30)
            };
            LabeledSample::msa(&format!("m{i:03}"), &text, f64::from(tenths) / 10.0)
        } else {
            let e = if i == 1 {
                Emotion::Neutral
            } else {
                *Emotion::ALL.choose(&mut rng).unwrap()
            };
            LabeledSample::erc(&format!("e{i:03}"), &text, e)
        });
    }
    let mut agree = 0;
    for s in &samples {
        let mut scored: Vec<(f64, &LabeledSample)> = samples
            .iter()
            .filter(|d| d.task != s.task && valence(d) == valence(s))
            .map(|d| (cosine(&s.text, &d.text), d))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.id.cmp(&b.1.id))
        });
        let want = scored
            .first()
            .ok_or_else(|| format!("{} has no donor", s.id))?
            .1;
        let got = complete_universal_label(s, &samples, &BowCosine, CompletionOptions::default())
            .map_err(fail)?;
        let copied = match s.task {
            Task::Msa => got.label.emotion == want.emotion,
            Task::Erc => got.label.intensity.map(|i| i.value()) == want.intensity,
        };
        ensure(got.donor_id == want.id && copied, || {
            format!("{}: donor {} vs {}", s.id, got.donor_id, want.id)
        })?;
        agree += 1;
    }
    Ok(format!(
        "{agree}/100 completions equal the brute-force argmax"
    ))
}

fn msa_reference(pred: &[f64], gold: &[f64]) -> Vec<Option<f64>> {
    let n = pred.len() as f64;
    let mae = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n;
    let (sx, sy) = (pred.iter().sum::<f64>(), gold.iter().sum::<f64>());
    let sxy: f64 = pred.iter().zip(gold).map(|(a, b)| a * b).sum();
    let sxx: f64 = pred.iter().map(|a| a * a).sum();
    let syy: f64 = gold.iter().map(|b| b * b).sum();
    let flat = pred.iter().all(|&p| p == pred[0]) || gold.iter().all(|&g| g == gold[0]);
    let corr =
        (!flat).then(|| (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt());
    let bucket = |v: f64| {
        let c = v.clamp(-3.0, 3.0);
        let r = c.abs().floor() + if c.abs().fract() >= 0.5 { 1.0 } else { 0.0 };
        (c.signum() * r) as i32
    };
    let acc7 = (0..pred.len())
        .filter(|&i| bucket(pred[i]) == bucket(gold[i]))
        .count() as f64
        / n;
    let binary = |idx: Vec<usize>, pos: &dyn Fn(f64) -> bool| {
        if idx.is_empty() {
            return (None, None);
        }
        let mut cm = [[0.0; 2]; 2];
        for &i in &idx {
            cm[usize::from(pos(gold[i]))][usize::from(pos(pred[i]))] += 1.0;
        }
        let acc = (cm[0][0] + cm[1][1]) / idx.len() as f64;
        let prec = if cm[0][1] + cm[1][1] > 0.0 {
            cm[1][1] / (cm[0][1] + cm[1][1])
        } else {
            0.0
        };
        let rec = if cm[1][0] + cm[1][1] > 0.0 {
            cm[1][1] / (cm[1][0] + cm[1][1])
        } else {
            0.0
        };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        (Some(acc), Some(f1))
    };
    let all: Vec<usize> = (0..pred.len()).collect();
    let nonzero: Vec<usize> = all.iter().copied().filter(|&i| gold[i] != 0.0).collect();
    let (a_nn, f_nn) = binary(all, &|v| v >= 0.0);
    let (a_pn, f_pn) = binary(nonzero, &|v| v > 0.0);
    vec![Some(mae), corr, Some(acc7), a_nn, a_pn, f_nn, f_pn]
}

fn erc_reference(pred: &[Emotion], gold: &[Emotion], labels: &[Emotion]) -> (f64, f64) {
    let k = labels.len();
    let idx = |e: &Emotion| labels.iter().position(|l| l == e).unwrap();
    let mut cm = vec![vec![0.0; k]; k];
    for (p, g) in pred.iter().zip(gold) {
        cm[idx(g)][idx(p)] += 1.0;
    }
    let n = pred.len() as f64;
    let acc = (0..k).map(|i| cm[i][i]).sum::<f64>() / n;
    let mut wf1 = 0.0;
    for c in 0..k {
        let col: f64 = (0..k).map(|r| cm[r][c]).sum();
        let row: f64 = cm[c].iter().sum();
        let p = if col > 0.0 { cm[c][c] / col } else { 0.0 };
        let r = if row > 0.0 { cm[c][c] / row } else { 0.0 };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        wf1 += row / n * f;
    }
    (acc, wf1)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn metrics(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.random_range(1..50);
        let grid = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(-30..=30)) / 10.0;
        let gold: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();
        let pred: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    grid(&mut rng)
                } else {
                    rng.random_range(-3.5..3.5)
                }
            })
            .collect();
        let r = msa_metrics(&pred, &gold).map_err(fail)?;
        for ((name, got), want) in r.values.iter().zip(msa_reference(&pred, &gold)) {
            ensure(close(*got, want), || {
                format!("case {case} {name}: {got:?} vs {want:?}")
            })?;
        }

        let k = rng.random_range(1..=Emotion::ALL.len());
        let labels = &Emotion::ALL[..k];
        let gold: Vec<Emotion> = (0..n).map(|_| *labels.choose(&mut rng).unwrap()).collect();
        let pred: Vec<Emotion> = (0..n).map(|_| *labels.choose(&mut rng).unwrap()).collect();
        let r = erc_metrics(&pred, &gold, labels).map_err(fail)?;
        let (acc, wf1) = erc_reference(&pred, &gold, labels);
        ensure(
            close(r.get("acc"), Some(acc)) && close(r.get("wf1"), Some(wf1)),
            || format!("case {case} erc"),
        )?;
    }
    use Emotion::{Anger, Joy, Sadness};
    let r = erc_metrics(
        &[Joy, Joy, Joy, Sadness],
        &[Joy, Joy, Joy, Anger],
        &[Joy, Anger, Sadness],
    )
    .map_err(fail)?;
    ensure(r.get("wf1") == Some(0.75), || {
        format!("hand WF1 {:?}", r.get("wf1"))
    })?;
    let r = msa_metrics(&[1.6], &[2.0]).map_err(fail)?;
    ensure(r.get("acc7") == Some(1.0), || {
        "1.6 not bucketed with 2".into()
    })?;
    Ok("1000 MSA and ERC cases within 1e-9; WF1 0.75 and 1.6 -> +2 exact".into())
}

fn contrastive(_: &Path) -> Outcome {
    let eq = inter_modal_cl_value(
        &Tensor::filled(&[3, 5], 0.3),
        &Tensor::filled(&[3, 5], 0.3),
        1.0,
    )
    .map_err(fail)?;
    ensure((eq - 3f64.ln()).abs() <= 1e-9, || {
        format!("equal scores give {eq}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_shift: f64 = 0.0;
    for case in 0..1000 {
        let (k, d) = (rng.random_range(2..9), rng.random_range(1..6));
        let mut random = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r)
                .map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect()
        };
        let (a, o) = (random(k, d), random(k, d));
        let tau = 0.5 + f64::from(case % 4) * 0.25;
        let base = inter_modal_cl_value(
            &Tensor::from_rows(&a).unwrap(),
            &Tensor::from_rows(&o).unwrap(),
            tau,
        )
        .map_err(fail)?;
        ensure(base > 0.0, || format!("case {case}: loss {base}"))?;
        // appending c_i * tau to anchor i and 1 to every other row adds c_i to all of anchor i's scores
        let shifts: Vec<f64> = (0..k).map(|i| (i as f64 - 3.5) * 4.0).collect();
        let a2: Vec<Vec<f64>> = a
            .iter()
            .zip(&shifts)
            .map(|(r, c)| [r.clone(), vec![c * tau]].concat())
            .collect();
        let o2: Vec<Vec<f64>> = o.iter().map(|r| [r.clone(), vec![1.0]].concat()).collect();
        let shifted = inter_modal_cl_value(
            &Tensor::from_rows(&a2).unwrap(),
            &Tensor::from_rows(&o2).unwrap(),
            tau,
        )
        .map_err(fail)?;
        worst_shift = worst_shift.max((shifted - base).abs());
    }
    ensure(worst_shift <= 1e-9, || {
        format!("shift changes the loss by {worst_shift:.2e}")
    })?;
    Ok(format!(
        "ln 3 gap {:.1e}; 1000 batches positive; max shift change {worst_shift:.1e}",
        (eq - 3f64.ln()).abs()
    ))
}

fn ablation_run(
    tmp: &Path,
    name: &str,
    seed: u64,
    edit: impl FnOnce(&mut RunConfig),
) -> Result<(f64, unimse::cli::TrainSummary), String> {
    let mut run = desk(&tmp.join(format!("{name}-{seed}")));
    (run.synth_msa_train, run.synth_msa_valid, run.synth_msa_test) = (800, 100, 100);
    (run.synth_erc_train, run.synth_erc_valid, run.synth_erc_test) = (800, 100, 100);
    run.epochs = 10;
    run.eval_every = 0;
    run.seed = seed;
    edit(&mut run);
    let summary = cmd_train(&run).map_err(fail)?;
    let m = unimse::datapipe::load_manifest(&summary.out_dir.join("data/unified.jsonl"))
        .map_err(fail)?;
    let test = formalize_split(&m, Some(Split::Test), &summary.vocab).map_err(fail)?;
    let em = exact_match(&summary.model, &test, run.drop().map_err(fail)?).map_err(fail)?;
    Ok((em, summary))
}

fn ablation(tmp: &Path) -> Outcome {
    let t0 = Instant::now();
    let arms = ["none", "a", "v", "av"];
    let mut means = Vec::new();
    for arm in arms {
        let mut total = 0.0;
        for seed in 0..3 {
            let (em, _) = ablation_run(tmp, arm, seed, |r| r.drop_modality = arm.into())?;
            total += em;
        }
        means.push(total / 3.0);
    }
    let detail: Vec<String> = arms
        .iter()
        .zip(&means)
        .map(|(a, m)| format!("{a} {m:.3}"))
        .collect();
    let mut detail = format!("mean test exact-match: {}", detail.join(", "));
    ensure(means[1..].iter().all(|m| means[0] > *m), || detail.clone())?;

    for (name, edit) in [("no-pmf", 0), ("no-cl", 1)] {
        let (_, s) = ablation_run(tmp, name, 0, |r| {
            r.epochs = 1;
            if edit == 0 {
                r.no_pmf = true;
            } else {
                r.no_cl = true;
            }
        })?;
        ensure(s.outcome.curve.iter().all(|b| b.total == b.task), || {
            format!("{name}: total differs from task loss")
        })?;
    }
    detail.push_str(&format!(
        "; no-pmf and no-cl give total = task; {:.0} s",
        t0.elapsed().as_secs_f64()
    ));
    Ok(detail)
}

fn determinism(tmp: &Path) -> Outcome {
    let mut run = desk(tmp);
    run.epochs = 3;
    run.eval_every = 1;
    let files = [
        "loss_curve.tsv",
        "validation.tsv",
        "final.ckpt",
        "best.ckpt",
        "effective_config.toml",
    ];
    let read = || -> Result<Vec<Vec<u8>>, String> {
        cmd_train(&run).map_err(fail)?;
        files
            .iter()
            .map(|f| std::fs::read(tmp.join(f)).map_err(fail))
            .collect()
    };
    let (a, b) = (read()?, read()?);
    for ((x, y), f) in a.iter().zip(&b).zip(files) {
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    let steps = String::from_utf8_lossy(&a[0]).lines().count() - 1;
    Ok(format!(
        "{steps} loss rows and both checkpoints bit-identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&Path) -> Outcome); 8] = [
        ("gradient", gradient_fidelity),
        ("overfit", overfit),
        ("codec", codec),
        ("completion", completion),
        ("metrics", metrics),
        ("contrastive", contrastive),
        ("ablation", ablation),
        ("determinism", determinism),
    ];
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let _ = env_logger::builder().is_test(true).try_init();
    let mut failed = 0;
    for (name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| name.contains(w.as_str())) {
            continue;
        }
        let tmp = tempfile::tempdir().expect("temp dir");
        let result = catch_unwind(AssertUnwindSafe(|| run(tmp.path()))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
