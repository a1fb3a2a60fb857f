use std::collections::BTreeSet;

use super::*;
use crate::datapipe::{formalize_split, synthesize_dataset, SynthConfig};
use crate::model::ModelConfig;
use crate::textcodec::Vocabulary;
use crate::unilabel::{unify_manifest, BowCosine, CompletionOptions};

fn args() -> ConfigArgs {
    ConfigArgs {
        config: None,
        set: Vec::new(),
        seed: None,
        preset: None,
        no_pmf: false,
        no_cl: false,
        drop_modality: None,
        out: None,
    }
}

#[test]
fn layering_order_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "epochs = 3\nalpha = 1\nseed = 5\n").unwrap();
    let mut a = args();
    a.config = Some(file);
    a.set = vec!["epochs=7".into(), "oracle=jaccard".into()];
    a.seed = Some(9);
    a.no_pmf = true;
    a.no_cl = true;
    a.drop_modality = Some("av".into());
    let b = a.builder().unwrap();
    let run = b.build().unwrap();
    assert_eq!(run.epochs, 7);
    assert_eq!(run.alpha, 1.0);
    assert_eq!(run.seed, 9);
    assert_eq!(run.oracle, "jaccard");
    let m = run.model_config();
    assert_eq!((m.n_f, m.n_cl), (0, 0));
    let t = run.train_config().unwrap();
    assert_eq!((t.alpha, t.beta), (0.0, 0.0));
    assert_eq!(t.drop_modality, crate::train::DropModality::Av);
    assert!(b.explicit_keys().contains("epochs") && b.explicit_keys().contains("no_pmf"));
    assert!(!b.explicit_keys().contains("d_t"));
}

#[test]
fn unknown_and_mistyped_keys_are_rejected() {
    let mut a = args();
    a.set = vec!["learning_rate=0.1".into()];
    assert!(a.build().unwrap_err().to_string().contains("learning_rate"));
    a.set = vec!["epochs=many".into()];
    assert!(a.build().unwrap_err().to_string().contains("epochs"));
    a.set = vec!["n_cl=3".into()];
    assert!(a.build().unwrap_err().to_string().contains("n_cl"));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "epochs = 1\nbogus = 2\n").unwrap();
    let mut a = args();
    a.config = Some(file);
    assert!(a.build().unwrap_err().to_string().contains("bogus"));
}

#[test]
fn presets_and_persisted_config_round_trip() {
    let desk = RunConfig::preset(Preset::Desk);
    assert_eq!(desk.model_config(), ModelConfig::preset(Preset::Desk));
    let paper = RunConfig::preset(Preset::Paper);
    assert_eq!(
        (
            paper.batch_size,
            paper.lr_backbone,
            paper.lr_main,
            paper.lr_pmf
        ),
        (96, 3e-4, 1e-4, 1e-4)
    );
    assert_eq!(
        (paper.alpha, paper.beta, paper.n_f, paper.n_cl, paper.d_a),
        (0.5, 0.5, 3, 3, 64)
    );
    let dir = tempfile::tempdir().unwrap();
    let path = desk.save(dir.path()).unwrap();
    let back = RunConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back, desk);

    let dir2 = tempfile::tempdir().unwrap();
    let file = dir2.path().join("p.toml");
    std::fs::write(&file, "preset = \"paper\"\n").unwrap();
    let mut a = args();
    a.config = Some(file);
    assert_eq!(a.build().unwrap().d_t, 768);
}

fn mixed_inputs() -> (Vocabulary, Vec<FormalizedInput>) {
    let cfg = SynthConfig {
        msa: [10, 0, 0],
        erc: [10, 0, 0],
        ..SynthConfig::default()
    };
    let m = synthesize_dataset(&cfg, 3).unwrap();
    let opts = CompletionOptions {
        widen_empty_pool: true,
        ..CompletionOptions::default()
    };
    let (m, _) = unify_manifest(&m, &BowCosine, opts).unwrap();
    let vocab = Vocabulary::build(&m.corpus()).unwrap();
    let inputs = formalize_split(&m, None, &vocab).unwrap();
    (vocab, inputs)
}

use crate::datapipe::FormalizedInput;

#[test]
fn gold_generations_score_perfectly() {
    let (vocab, inputs) = mixed_inputs();
    let gens: Vec<_> = inputs.iter().map(|x| x.target.clone()).collect();
    let r = score_generations(&inputs, &gens, &vocab, None).unwrap();
    assert_eq!(r.exact_match, Some(1.0));
    assert_eq!(r.malformed, 0);
    let msa = &r.reports[0];
    // completed intensities sit on the tenths grid, so gold decodes exactly
    assert_eq!(msa.get("mae"), Some(0.0));
    assert_eq!(msa.get("acc7"), Some(1.0));
    assert_eq!(r.reports[1].get("wf1"), Some(1.0));
}

#[test]
fn task_filter_and_malformed_counts() {
    let (vocab, inputs) = mixed_inputs();
    let gens: Vec<_> = inputs.iter().map(|_| vec![crate::textcodec::EOS]).collect();
    let r = score_generations(&inputs, &gens, &vocab, Some(Task::Msa)).unwrap();
    assert_eq!(r.reports.len(), 1);
    assert_eq!(r.reports[0].task, Task::Msa);
    assert_eq!(r.reports[0].n, 10);
    assert_eq!(r.malformed, 10);
    assert_eq!(r.exact_match, Some(0.0));
}

#[test]
fn mismatched_keys_are_listed() {
    let a = ModelConfig::preset(Preset::Desk);
    let mut b = a.clone();
    b.d_t = 16;
    b.n_f = 1;
    let explicit: BTreeSet<String> = ["d_t".to_string(), "epochs".to_string()].into();
    let bad = config_mismatches(&a, &b, &explicit, Some((6, 7)));
    assert_eq!(bad.len(), 2, "{bad:?}");
    assert!(bad[0].starts_with("d_t") && bad[1].starts_with("d_v_in"));
    assert!(config_mismatches(&a, &b, &BTreeSet::new(), Some((6, 5))).is_empty());
}
