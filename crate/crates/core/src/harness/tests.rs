use std::fs;

use super::*;
use crate::error::Error;
use crate::learners::Method;
use crate::stats::Verdict;

fn tiny(mut c: ExperimentConfig) -> ExperimentConfig {
    c.pt.hidden_dims = vec![16];
    c.pt.max_epochs = 20;
    c.maml.hidden_dims = vec![16];
    c.maml.max_epochs = 4;
    c.maml.outer_steps_per_epoch = 2;
    c.maml.meta_batch = 4;
    c.eval.meta_batch = 24;
    c.diversity.num_tasks = 12;
    c.probe.train.max_epochs = 20;
    c.probe.train.hidden_dims = vec![16];
    c
}

#[test]
fn config_toml_round_trip() {
    let mut c = ExperimentConfig::high_diversity(3);
    c.maml_orders = vec![Method::FoMaml, Method::HoMaml];
    c.eval.eval_lr = Some(0.02);
    let text = c.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(
        ExperimentConfig::from_toml_str("name = \"x\"\nbogus = 1\n"),
        Err(Error::Config(_))
    ));
    let mut c = ExperimentConfig::low_diversity(0);
    c.eval.n_way = 3;
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::low_diversity(0);
    c.maml_orders = vec![Method::Pt];
    assert!(c.validate().is_err());
}

#[test]
fn partial_toml_fills_defaults() {
    let c = ExperimentConfig::from_toml_str("name = \"p\"\n[eval]\nmeta_batch = 50\n").unwrap();
    assert_eq!(c.eval.meta_batch, 50);
    assert_eq!(c.eval.eval_steps, vec![5, 10]);
    assert_eq!(c.maml, ExperimentConfig::default().maml);
}

#[test]
fn presets_share_seeds() {
    let c = ExperimentConfig::high_diversity(9);
    assert_eq!(c.benchmark.seed, 9);
    assert_eq!(c.seeds.init, 9);
    assert_eq!(c.pt_config().seed, c.maml_config(Method::HoMaml).seed);
    assert_eq!(c.maml_config(Method::HoMaml).method, Method::HoMaml);
    assert_eq!(c.pt_config().method, Method::Pt);
}

#[test]
fn low_preset_run_gives_two_decisions_on_shared_tasks() {
    let c = tiny(ExperimentConfig::low_diversity(1));
    let r = run_comparison(&c);
    assert!(r.is_completed(), "{:?}", r.status);
    assert_eq!(r.task_ids.len(), 24);
    assert_eq!(r.decisions.len(), 2);
    assert_eq!(r.decisions[0].label(), "fo_maml/maml5");
    assert_eq!(r.decisions[1].label(), "fo_maml/maml10");
    let pt = r.pt.as_ref().unwrap().eval(None).unwrap();
    assert_eq!(pt.task_ids, r.task_ids);
    for m in &r.maml {
        for e in &m.evals {
            assert_eq!(e.result.task_ids, r.task_ids);
        }
    }
    assert!(r.diversity.is_some());
    for stage in [
        "benchmark",
        "train_pt",
        "meta_test_pt",
        "train_fo_maml",
        "diversity",
    ] {
        assert!(r.timing.stage_seconds.contains_key(stage), "{stage}");
    }
    assert_eq!(r.regime(), "low");
}

#[test]
fn runs_are_deterministic_apart_from_timing() {
    let c = tiny(ExperimentConfig::low_diversity(2));
    let a = run_comparison(&c);
    let b = run_comparison(&c);
    assert_eq!(a.without_timing(), b.without_timing());
}

#[test]
fn high_preset_is_more_diverse() {
    let lo = run_comparison(&tiny(ExperimentConfig::low_diversity(4)));
    let hi = run_comparison(&tiny(ExperimentConfig::high_diversity(4)));
    let (lo, hi) = (lo.diversity.unwrap(), hi.diversity.unwrap());
    assert!(
        hi.coefficient - hi.ci95_halfwidth > lo.coefficient + lo.ci95_halfwidth,
        "{hi:?} vs {lo:?}"
    );
}

#[test]
fn regime_falls_back_to_diversity_threshold() {
    let mut c = tiny(ExperimentConfig::low_diversity(5));
    c.regime = None;
    c.regime_threshold = 0.0;
    let r = run_comparison(&c);
    assert_eq!(r.regime(), "high");
    let mut c = c.clone();
    c.diversity.enabled = false;
    assert_eq!(run_comparison(&c).regime(), "unknown");
}

#[test]
fn failing_stage_is_named_and_earlier_work_kept() {
    let mut c = tiny(ExperimentConfig::low_diversity(0));
    // more ways than the test split has classes
    c.eval.n_way = 30;
    c.maml.n_way = 30;
    let r = run_comparison(&c);
    assert_eq!(r.failed_stage(), Some("sample_tasks"));
    assert!(r.pt.is_none());
    assert!(r.timing.stage_seconds.contains_key("benchmark"));

    let mut c = tiny(ExperimentConfig::low_diversity(0));
    c.maml.outer_lr = 1e300;
    let r = run_comparison(&c);
    assert_eq!(r.failed_stage(), Some("train_fo_maml"));
    assert!(r.pt.is_some());
    assert!(r.decisions.is_empty());
}

#[test]
fn make_decisions_needs_pt() {
    let c = tiny(ExperimentConfig::low_diversity(0));
    let mut r = run_comparison(&c);
    let again = make_decisions(&r).unwrap();
    assert_eq!(again, r.decisions);
    r.pt = None;
    assert!(make_decisions(&r).is_err());
}

#[test]
fn persisted_record_loads_and_is_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_comparison(&tiny(ExperimentConfig::low_diversity(6)));
    let path = persist_record(&r, dir.path()).unwrap();
    for name in [
        "config.toml",
        "decisions.csv",
        "curves.csv",
        "accuracies.csv",
        "record.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let back = load_record(&path).unwrap();
    assert_eq!(back.task_ids, r.task_ids);
    assert_eq!(back.decisions.len(), r.decisions.len());
    for (a, b) in back.decisions.iter().zip(&r.decisions) {
        assert_eq!(a.effect_size.verdict, b.effect_size.verdict);
        assert!((a.effect_size.effect_size - b.effect_size.effect_size).abs() < 1e-12);
    }
    let cfg = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg, r.config);

    let before = fs::read(&path).unwrap();
    assert!(persist_record(&r, dir.path()).is_err());
    assert_eq!(fs::read(&path).unwrap(), before);

    let accs = fs::read_to_string(dir.path().join("accuracies.csv")).unwrap();
    assert_eq!(
        accs.lines().next().unwrap(),
        "task_id,pt,fo_maml_5,fo_maml_10"
    );
    assert_eq!(accs.lines().count(), 1 + r.task_ids.len());
}

#[test]
fn report_layout_and_determinism() {
    let mut hist_cfg = tiny(ExperimentConfig::high_diversity(7));
    hist_cfg.diversity.histogram = true;
    hist_cfg.diversity.histogram_tasks = 16;
    hist_cfg.diversity.bins = 5;
    let mut failing = tiny(ExperimentConfig::low_diversity(7));
    failing.name = "broken".into();
    failing.eval.n_way = 30;
    failing.maml.n_way = 30;
    let records = vec![
        run_comparison(&tiny(ExperimentConfig::low_diversity(7))),
        run_comparison(&hist_cfg),
        run_comparison(&failing),
    ];

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = emit_report(&records, a.path()).unwrap();
    // wall-clock fields must not leak into the report
    let shifted: Vec<RunRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.timing.started_unix_ms += 12345;
            r
        })
        .collect();
    let rb = emit_report(&shifted, b.path()).unwrap();
    assert_eq!(ra.digest, rb.digest);
    assert_eq!(ra.files.len(), rb.files.len());
    for (fa, fb) in ra.files.iter().zip(&rb.files) {
        assert_eq!(
            fa.strip_prefix(a.path()).unwrap(),
            fb.strip_prefix(b.path()).unwrap()
        );
        assert_eq!(
            fs::read(fa).unwrap(),
            fs::read(fb).unwrap(),
            "{}",
            fa.display()
        );
    }

    for rel in [
        "decisions/low-seed7.csv",
        "decisions/high-seed7.csv",
        "histograms/high-seed7__cross.csv",
        "summary.csv",
        "trends.json",
        "digest.txt",
    ] {
        assert!(a.path().join(rel).is_file(), "{rel}");
    }
    assert!(!a.path().join("decisions/broken.csv").exists());
    assert_eq!(ra.files.last().unwrap(), &a.path().join("digest.txt"));
    assert!(ra.digest.contains("run broken FAILED at sample_tasks"));
    assert!(ra.digest.contains("mean H1 effect size by regime"));

    let regimes: Vec<&str> = ra.summary.iter().map(|g| g.key.0.as_str()).collect();
    assert_eq!(regimes, ["high", "low"]);
    let decisions: usize = ra.summary.iter().map(|g| g.summary.total()).sum();
    assert_eq!(decisions, 4);
    let h1: usize = ra
        .summary
        .iter()
        .map(|g| g.summary.count(Verdict::H1Pt) + g.summary.count(Verdict::H1Maml))
        .sum();
    assert_eq!(ra.trends.iter().map(|t| t.h1_count).sum::<usize>(), h1);
    assert!(ra.trends.iter().all(|t| t.seeds == vec![7]));
}

#[test]
fn empty_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&[], dir.path()).is_err());
}
