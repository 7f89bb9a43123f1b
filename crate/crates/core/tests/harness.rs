use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use paramspec::finetune::VariantKind;
use paramspec::harness::{
    append_record, cmd_gen_data, cmd_pss, cmd_report, cmd_train, list_checkpoints, load_corpus, read_records,
    ExperimentConfig, RunRecord,
};
use paramspec::Error;
use proptest::prelude::*;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.corpus.n_concepts = 18;
    cfg.corpus.finetune_concepts = 1;
    cfg.model.d_model = 16;
    cfg.model.d_mlp = 32;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.max_seq = 48;
    cfg.train.steps = 20;
    cfg.train.seq_len = 24;
    cfg.train.batch_size = 2;
    cfg.checkpoints = vec![10, 20];
    cfg.surgery.concepts = Some(vec![0, 1, 2]);
    cfg.surgery.ratios = vec![0.1, 0.3];
    cfg
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.clone(), fs::read(p).unwrap())
        })
        .collect()
}

#[test]
fn gen_data_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();
    let first = read_dir_bytes(&cfg.corpus_dir());
    cmd_gen_data(&cfg).unwrap();
    assert_eq!(first, read_dir_bytes(&cfg.corpus_dir()));
    assert_eq!(read_records(&cfg.results_log()).unwrap().len(), 2);
}

#[test]
fn missing_output_dir_is_created() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(&tmp.path().join("a").join("b"));
    cmd_gen_data(&cfg).unwrap();
    assert!(cfg.corpus_dir().join("meta.json").exists());
}

#[test]
fn changed_corpus_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.corpus.seed += 1;
    assert!(matches!(load_corpus(&cfg), Err(Error::Config(_))));
}

#[test]
fn training_writes_scheduled_checkpoints_and_sweeps_them() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();
    cmd_train(&cfg, None).unwrap();
    let ckpts = list_checkpoints(&cfg).unwrap();
    assert_eq!(ckpts.iter().map(|c| c.0).collect::<Vec<_>>(), vec![10, 20]);
    let files = fs::read_dir(cfg.checkpoint_dir())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    assert_eq!(files, 2);
    assert_eq!(fs::read(&ckpts[1].1).unwrap(), fs::read(cfg.model_path()).unwrap());

    cfg.surgery.all_checkpoints = true;
    let records = cmd_pss(&cfg).unwrap();
    assert_eq!(records.len(), 2);
    for step in [10, 20] {
        let csv = fs::read_to_string(cfg.output_dir.join(format!("pss/step-{step:06}/reports.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 2, "one row per concept and ratio plus header");
    }
}

#[test]
fn resume_rejects_mismatched_model() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.train.steps = 10;
    cfg.checkpoints = vec![10];
    cmd_gen_data(&cfg).unwrap();
    cmd_train(&cfg, None).unwrap();
    cfg.model.d_mlp = 48;
    let err = cmd_train(&cfg, Some(&cfg.checkpoint_path(10))).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn unknown_variant_is_an_error() {
    assert!("ft-xx".parse::<VariantKind>().is_err());
    assert_eq!("FT-PV".parse::<VariantKind>().unwrap(), VariantKind::Top);
    let bad = "[finetune]\nvariants = [\"ft-zz\"]\n";
    assert!(ExperimentConfig::from_toml(bad).is_err());
}

#[test]
fn unknown_config_field_is_named() {
    let err = ExperimentConfig::from_toml("[model]\nd_modle = 64\n").unwrap_err();
    assert!(err.to_string().contains("d_modle"), "{err}");
}

#[test]
fn config_toml_round_trips_and_hash_ignores_output_dir() {
    let a = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
    assert_eq!(back, a);
    let mut b = a.clone();
    b.output_dir = PathBuf::from("/elsewhere");
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    b.train.seed += 1;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
}

fn pss_record(label: &str, pss: f64, acc: f64) -> RunRecord {
    RunRecord {
        config_hash: "h".into(),
        command: "pss".into(),
        started_ms: 0,
        finished_ms: 0,
        labels: BTreeMap::from([("checkpoint".to_string(), label.to_string())]),
        metrics: BTreeMap::from([("pss".to_string(), pss), ("mcq_accuracy".to_string(), acc)]),
        artifacts: Vec::new(),
    }
}

#[test]
fn report_needs_three_models() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("results.jsonl");
    append_record(&log, &pss_record("a", 0.1, 0.5)).unwrap();
    append_record(&log, &pss_record("b", 0.2, 0.6)).unwrap();
    let r = cmd_report(&[log]).unwrap();
    assert!(r.spearman.is_none() && r.pearson.is_none());
    assert!(r.notice.unwrap().contains("at least 3"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_spearman_matches_rank_formula(
        perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let log = tmp.path().join("results.jsonl");
        for (i, &p) in perm.iter().enumerate() {
            append_record(&log, &pss_record(&format!("m{i}"), i as f64 / 10.0, 0.3 + p as f64 / 20.0)).unwrap();
        }
        let r = cmd_report(&[log]).unwrap();
        let d2: f64 = perm.iter().enumerate().map(|(i, &p)| (i as f64 - p as f64).powi(2)).sum();
        let want = 1.0 - 6.0 * d2 / (7.0 * 48.0);
        prop_assert!((r.spearman.unwrap() - want).abs() < 1e-12);
        prop_assert_eq!(r.points.len(), 7);
    }
}
