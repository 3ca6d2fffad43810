use std::fs;
use std::path::Path;

use osnbias_core::attitude::{AttitudeMode, Bias};
use osnbias_core::mlp::Model;
use osnbias_core::pipeline::{execute, run_pipeline, Overrides, PipelineConfig, Stage, Target};
use osnbias_core::synth::{generate_population, SynthConfig, PIPELINE_FILE};
use osnbias_core::Error;

fn synth(dir: &Path, n_users: usize, seed: u64) -> PipelineConfig {
    let cfg = SynthConfig {
        n_users,
        seed,
        target_bias_fraction: 0.04,
        ..SynthConfig::default()
    };
    generate_population(&cfg, dir).unwrap();
    PipelineConfig::load(dir.join(PIPELINE_FILE)).unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(synth(dir.path(), 600, 3)).unwrap();
    let out = dir.path().join("out");
    for name in [
        "user_table.csv",
        "post_scores.csv",
        "attitudes.csv",
        "histogram.csv",
        "features.csv",
        "correlation_spearman_all.csv",
        "split.csv",
        "model.json",
        "train_history.csv",
        "contingency.csv",
        "predictions.csv",
        "gw.csv",
        "gw_summary.csv",
        "report.txt",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert!(files_in(&out).iter().all(|f| !f.ends_with(".tmp")));
    assert_eq!(outcome.artifacts.last().unwrap(), "report.txt");

    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(
        report
            .lines()
            .filter(|l| l.starts_with("generated_at:"))
            .count(),
        1
    );
    assert!(report.contains("[config]\nseed = 3\n"));
    assert!(report.contains("[evaluate]"));

    let attitudes = fs::read_to_string(out.join("attitudes.csv")).unwrap();
    assert!(attitudes.starts_with("user_id,attitude,polarity,bias\n"));
    assert_eq!(attitudes.lines().count(), 601);
    let hist = fs::read_to_string(out.join("histogram.csv")).unwrap();
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 600);

    let model = Model::from_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.feature_names(), ["nr", "li", "nfr", "nfo"]);

    for f in files_in(&out).iter().filter(|f| f.ends_with(".csv")) {
        let body = fs::read_to_string(out.join(f)).unwrap();
        assert!(
            !body.contains(dir.path().to_str().unwrap()),
            "{f} holds an absolute path"
        );
    }
}

#[test]
fn single_stage_writes_only_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 300, 5);
    execute(cfg.clone(), &[Stage::Label], None).unwrap();
    assert_eq!(
        files_in(&dir.path().join("out")),
        ["attitudes.csv", "histogram.csv", "report.txt"]
    );
    execute(cfg, &[Stage::Ingest], None).unwrap();
    assert!(dir.path().join("out/user_table.csv").is_file());
    assert!(!dir.path().join("out/post_scores.csv").exists());
}

#[test]
fn evaluate_with_saved_model_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 800, 6);
    let full = run_pipeline(cfg.clone()).unwrap();
    let model =
        Model::from_json(&fs::read_to_string(dir.path().join("out/model.json")).unwrap()).unwrap();
    let mut again_cfg = cfg;
    again_cfg.apply(&Overrides {
        output_dir: Some(dir.path().join("again")),
        ..Overrides::default()
    });
    let again = execute(again_cfg, &[Stage::Evaluate], Some(model)).unwrap();
    assert_eq!(
        full.evaluated.unwrap().summary,
        again.evaluated.unwrap().summary
    );
    assert_eq!(
        fs::read(dir.path().join("out/gw.csv")).unwrap(),
        fs::read(dir.path().join("again/gw.csv")).unwrap()
    );
}

#[test]
fn among_biased_target_uses_only_biased_users() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth(dir.path(), 2000, 7);
    cfg.apply(&Overrides {
        target: Some(Target::AmongBiased),
        ..Overrides::default()
    });
    let outcome = run_pipeline(cfg).unwrap();
    let target = outcome.target.unwrap();
    assert!(!target.is_empty());
    assert!(target.iter().all(|v| v.bias.is_biased()));
    assert!(target
        .iter()
        .all(|v| v.label == (v.bias == Bias::OverlyPositive) as u8));
}

#[test]
fn overrides_change_labels() {
    let dir = tempfile::tempdir().unwrap();
    let base = synth(dir.path(), 400, 8);
    let mut loose = base.clone();
    loose.apply(&Overrides {
        k: Some(1.0),
        seed: Some(99),
        ..Overrides::default()
    });
    assert_eq!(loose.seed, 99);
    let mut mean = base.clone();
    mean.apply(&Overrides {
        mode: Some(AttitudeMode::Mean),
        ..Overrides::default()
    });
    let strict = execute(base, &[Stage::Label], None)
        .unwrap()
        .labeled
        .unwrap();
    let loose = execute(loose, &[Stage::Label], None)
        .unwrap()
        .labeled
        .unwrap();
    let mean = execute(mean, &[Stage::Label], None)
        .unwrap()
        .labeled
        .unwrap();
    assert!(loose.count(Bias::Normal) < strict.count(Bias::Normal));
    assert_eq!(loose.stats.k, 1.0);
    assert_ne!(mean.stats.mean, strict.stats.mean);
    assert!(mean
        .records
        .iter()
        .zip(&strict.records)
        .any(|(m, s)| m.attitude != s.attitude));
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth(dir.path(), 100, 10);
    cfg.train.hidden = vec![2];
    cfg.split.test_fraction = 0.2;
    // a lexicon without a single term scores everything 0: one class only
    fs::write(dir.path().join("lexicon.tsv"), "zzz\t1\n").unwrap();
    let err = run_pipeline(cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "train"),
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().starts_with("stage `train` failed"));
}

#[test]
fn malformed_posts_file_fails_in_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 50, 11);
    fs::write(
        dir.path().join("reviews.jsonl"),
        "not json\nstill not\n{\"x\":1}\n",
    )
    .unwrap();
    let err = run_pipeline(cfg).unwrap_err().to_string();
    assert!(err.starts_with("stage `ingest` failed"), "{err}");
}
