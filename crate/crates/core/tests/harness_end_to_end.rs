mod common;

use std::collections::BTreeMap;
use std::fs;

use oneclass_core::harness::{
    run_benchmark, run_sweep, Benchmark, HarnessError, NegativesSourceKind, SamplerKind, SweepAxis, TaskLine,
    AGGREGATE_FILE, EPISODES_FILE, PER_TASK_FILE, SWEEP_FILE,
};
use oneclass_core::negatives::{load_corpus, load_transcripts, prompt_for, FixtureBackend, NegativeCorpus};
use oneclass_core::thresholding::Method;
use oneclass_core::ExperimentConfig;

fn bench_from(cfg: &ExperimentConfig) -> Benchmark {
    let (images, prototypes) = common::separable(30, 7);
    Benchmark::from_parts(
        cfg.clone(),
        images,
        prototypes,
        None,
        Some(common::taxonomy()),
        common::corpus(),
        cfg.lambda_bar,
    )
    .unwrap()
}

fn base() -> ExperimentConfig {
    ExperimentConfig {
        n_tasks: 50,
        n_queries: 20,
        k: 5,
        lambda_bar: Some(0.5),
        seed: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn separable_data_with_ft_scores_perfectly() {
    let cfg = ExperimentConfig {
        method: Method::Ft,
        ..base()
    };
    let run = bench_from(&cfg).run().unwrap();
    assert_eq!(run.outcomes.len(), 50);
    for o in &run.outcomes {
        assert_eq!(o.metrics.f1_macro, 100.0, "task {}", o.task.task_id);
        assert_eq!(o.metrics.auc, 100.0);
    }
    let agg = run.report.metric("f1_macro").unwrap();
    assert_eq!((agg.mean, agg.ci95), (100.0, 0.0));
}

#[test]
fn outputs_are_byte_identical_across_worker_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::write_inputs(dir.path(), 30);
    cfg.method = Method::AnpFt;
    let mut reference: Option<Vec<Vec<u8>>> = None;
    for (i, workers) in [1, 2, 4, 1].into_iter().enumerate() {
        cfg.workers = Some(workers);
        cfg.out_dir = Some(dir.path().join(format!("out{i}")));
        run_benchmark(&cfg, None).unwrap();
        let files: Vec<Vec<u8>> = [PER_TASK_FILE, AGGREGATE_FILE, EPISODES_FILE]
            .iter()
            .map(|f| fs::read(cfg.out_dir.as_ref().unwrap().join(f)).unwrap())
            .collect();
        match &reference {
            None => reference = Some(files),
            Some(r) => assert_eq!(r, &files, "workers = {workers}"),
        }
    }
}

#[test]
fn aggregate_csv_means_match_per_task_lines() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::write_inputs(dir.path(), 30);
    cfg.method = Method::MnpFt;
    cfg.lambda_bar = Some(0.7);
    cfg.out_dir = Some(dir.path().join("out"));
    run_benchmark(&cfg, None).unwrap();
    let out = cfg.out_dir.unwrap();

    let lines: Vec<TaskLine> = fs::read_to_string(out.join(PER_TASK_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), cfg.n_tasks);
    let field = |l: &TaskLine, m: &str| match m {
        "f1_macro" => l.f1_macro,
        "f1_pos" => l.f1_pos,
        "f1_neg" => l.f1_neg,
        "accuracy" => l.accuracy,
        "auc" => l.auc,
        "fpr" => l.fpr,
        "fnr" => l.fnr,
        other => panic!("unexpected metric {other}"),
    };

    let csv = fs::read_to_string(out.join(AGGREGATE_FILE)).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("dataset,method,level,metric,mean,ci95"));
    let mut seen = BTreeMap::new();
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[..3], ["synthetic", "MNP+FT", ""]);
        let mean: f64 = cols[4].parse().unwrap();
        let direct = lines.iter().map(|l| field(l, cols[3])).sum::<f64>() / lines.len() as f64;
        assert!((mean - direct).abs() <= 1e-9, "{}: {mean} vs {direct}", cols[3]);
        seen.insert(cols[3].to_string(), mean);
    }
    assert_eq!(seen.len(), 7);
}

#[test]
fn alpha_endpoints_reproduce_the_plain_methods() {
    let bench = bench_from(&base());
    let tasks = bench.sample(0.5, 0).unwrap();
    let spec = |method, alpha| {
        let mut s = bench.spec();
        s.method = method;
        s.alpha = alpha;
        s
    };
    let decisions = |method, alpha| -> Vec<_> {
        bench
            .evaluate(&tasks, &spec(method, alpha))
            .unwrap()
            .outcomes
            .into_iter()
            .flat_map(|o| o.decisions)
            .collect()
    };
    let ft = decisions(Method::Ft, 0.5);
    assert_eq!(decisions(Method::AnpFt, 0.0), ft);
    assert_eq!(decisions(Method::MnpFt, 0.0), ft);
    assert_eq!(decisions(Method::AnpFt, 1.0), decisions(Method::Anp, 0.5));
    assert_eq!(decisions(Method::MnpFt, 1.0), decisions(Method::Mnp, 0.5));
}

#[test]
fn alpha_sweep_rows_equal_direct_runs() {
    let bench = bench_from(&base());
    let table = bench.run_sweep(SweepAxis::Alpha, &[0.0, 0.5, 1.0]).unwrap();
    let tasks = bench.sample(0.5, 0).unwrap();
    for row in &table.rows {
        let mut spec = bench.spec();
        spec.alpha = row.value;
        assert_eq!(row.run.outcomes, bench.evaluate(&tasks, &spec).unwrap().outcomes);
        assert!(row.relative_f1_macro.is_none());
    }
}

#[test]
fn threshold_grid_sweep_reports_difference_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::write_inputs(dir.path(), 30);
    cfg.method = Method::Ft;
    cfg.out_dir = Some(dir.path().join("out"));
    let table = run_sweep(&cfg, SweepAxis::ThresholdGrid, &[0.5, 0.999, 0.05], None).unwrap();
    assert_eq!(table.rows[0].relative_f1_macro, Some(0.0));
    assert!(table.rows[1].relative_f1_macro.unwrap() < 0.0);
    assert!(table.rows[2].relative_f1_macro.unwrap() < 0.0);

    let csv = fs::read_to_string(dir.path().join("out").join(SWEEP_FILE)).unwrap();
    let mut rows = csv.lines();
    assert_eq!(
        rows.next(),
        Some("dataset,method,level,axis,value,metric,mean,ci95,relative")
    );
    let f1_rows: Vec<&str> = rows.filter(|r| r.contains(",f1_macro,")).collect();
    assert_eq!(f1_rows.len(), 3);
    assert!(f1_rows[0].starts_with("synthetic,FT,,threshold-grid,0.5,f1_macro,100,0,0"));
}

#[test]
fn pos_rate_sweep_resamples_tasks() {
    let bench = bench_from(&ExperimentConfig {
        method: Method::Ft,
        ..base()
    });
    let table = bench.run_sweep(SweepAxis::PosRate, &[0.1, 0.5, 0.9]).unwrap();
    for (row, expected) in table.rows.iter().zip([2, 10, 18]) {
        assert!(row
            .run
            .outcomes
            .iter()
            .all(|o| o.task.positive_indices.len() == expected));
    }
}

#[test]
fn k_sweep_uses_prefixes_of_the_negative_list() {
    let bench = bench_from(&ExperimentConfig {
        method: Method::Mnp,
        ..base()
    });
    let table = bench.run_sweep(SweepAxis::K, &[1.0, 3.0, 5.0]).unwrap();
    let thresholds: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.run.outcomes[0].decisions[0].threshold)
        .collect();
    assert!(thresholds[0] <= thresholds[1] && thresholds[1] <= thresholds[2]);
    assert!(bench.run_sweep(SweepAxis::K, &[2.5]).is_err());
}

#[test]
fn hierarchical_runs_record_the_level() {
    let cfg = ExperimentConfig {
        sampler: SamplerKind::Hierarchical,
        level: 1,
        method: Method::Ft,
        lambda_bar: Some(0.3),
        ..base()
    };
    let bench = bench_from(&cfg);
    let run = bench.run().unwrap();
    assert_eq!(run.level, Some(1));
    for o in &run.outcomes {
        assert_eq!(o.task.level, Some(1));
        assert_eq!(o.metrics.f1_macro, 100.0);
    }
    let table = bench.run_sweep(SweepAxis::Level, &[0.0, 1.0]).unwrap();
    assert_eq!(table.rows[0].run.level, Some(0));
}

#[test]
fn groundtruth_negatives_stay_inside_the_parent_group() {
    let cfg = ExperimentConfig {
        sampler: SamplerKind::Hierarchical,
        negatives: NegativesSourceKind::Groundtruth,
        method: Method::Mnp,
        k: 2,
        ..base()
    };
    bench_from(&cfg).run().unwrap();
}

#[test]
fn missing_corpus_entry_fails_fast() {
    let (images, prototypes) = common::separable(30, 7);
    let cfg = ExperimentConfig {
        method: Method::AnpFt,
        ..base()
    };
    let bench = Benchmark::from_parts(cfg, images, prototypes, None, None, NegativeCorpus::new(), Some(0.5)).unwrap();
    let err = bench.run().unwrap_err();
    assert_eq!(err.kind(), "missing-negatives-for-target");
    assert!(matches!(err, HarnessError::Task { .. }));
}

#[test]
fn ft_runs_without_any_negatives() {
    let (images, prototypes) = common::separable(30, 7);
    let cfg = ExperimentConfig {
        method: Method::Ft,
        ..base()
    };
    let bench = Benchmark::from_parts(cfg, images, prototypes, None, None, NegativeCorpus::new(), Some(0.5)).unwrap();
    bench.run().unwrap();
}

#[test]
fn llm_negatives_are_fetched_cached_and_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::write_inputs(dir.path(), 30);
    cfg.negatives = NegativesSourceKind::Llm;
    cfg.corpus = Some(dir.path().join("llm_corpus.json"));
    cfg.transcripts = Some(dir.path().join("transcripts.json"));
    cfg.k = 2;
    cfg.method = Method::Mnp;
    let mut backend = FixtureBackend::new();
    for t in common::classes() {
        let others: Vec<&str> = common::classes().into_iter().filter(|c| *c != t).take(2).collect();
        backend = backend.with_response(prompt_for(t, 2), format!("1. {}\n2. {}", others[0], others[1]));
    }
    let first = run_benchmark(&cfg, Some(&backend)).unwrap();

    let corpus = load_corpus(cfg.corpus.as_ref().unwrap()).unwrap();
    assert_eq!(corpus.len(), common::classes().len());
    assert_eq!(corpus.get("pug", 2).unwrap().negatives(), ["boxer", "beagle"]);
    let transcripts = load_transcripts(cfg.transcripts.as_ref().unwrap()).unwrap();
    assert_eq!(transcripts.len(), common::classes().len());

    // Second run is served from the persisted corpus; an empty backend would fail.
    let again = run_benchmark(&cfg, Some(&FixtureBackend::new())).unwrap();
    assert_eq!(first.outcomes, again.outcomes);
}

#[test]
fn config_files_load_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("exp.toml");
    fs::write(
        &toml_path,
        "images = \"a.emb1\"\nprototypes = \"b.emb1\"\nmethod = \"anp+ft\"\nalpha = 0.25\nn_tasks = 7\n[llm]\nmodel = \"m\"\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_file(&toml_path).unwrap();
    assert_eq!(
        (cfg.method, cfg.alpha, cfg.n_tasks, cfg.n_queries),
        (Method::AnpFt, 0.25, 7, 100)
    );
    assert_eq!(cfg.llm.model, "m");

    let json_path = dir.path().join("exp.json");
    fs::write(&json_path, r#"{"images":"a.emb1","method":"mnp","k":3}"#).unwrap();
    let cfg = ExperimentConfig::from_file(&json_path).unwrap();
    assert_eq!((cfg.method, cfg.k), (Method::Mnp, 3));

    fs::write(&json_path, r#"{"images":"a.emb1","alhpa":0.3}"#).unwrap();
    assert!(ExperimentConfig::from_file(&json_path).is_err());
}

#[test]
fn launch_fails_when_inputs_are_missing() {
    let cfg = ExperimentConfig {
        images: "/nonexistent/images.emb1".into(),
        prototypes: "/nonexistent/prototypes.emb1".into(),
        ..base()
    };
    let err = run_benchmark(&cfg, None).err().unwrap();
    assert_eq!(err.kind(), "config-invalid");
}
