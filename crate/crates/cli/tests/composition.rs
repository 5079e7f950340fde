//! Commands driven in-process, checked against the core operations composed
//! by hand.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use confscale_cli::commands::{cache, eval, gen_data, report};
use confscale_cli::common::build_backends;
use confscale_cli::config::RunConfig;
use confscale_cli::error::CliError;
use confscale_core::dataset::{build_tuples, GenerationConfig};
use confscale_core::metrics::{auroc, ece, CalibrationRecord};
use confscale_core::persistence::{read_pool_file, read_queries, read_tuples, write_queries, ConfidenceSource};
use confscale_core::strategies::{run_strategy, StrategyConfig, StrategyKind};
use confscale_core::{answers_equal, AnswerType, CanonicalAnswer, Query};

fn queries(n: usize) -> Vec<Query> {
    (0..n)
        .map(|i| {
            if i % 4 == 0 {
                Query::new(format!("n{i}"), format!("What is {i} squared?"), AnswerType::Number,
                    Some(CanonicalAnswer::number((i * i) as f64).unwrap()))
                .unwrap()
            } else {
                let gold = CanonicalAnswer::letter(['A', 'B', 'C', 'D'][i % 4]).unwrap();
                Query::new(format!("m{i}"), format!("Item {i}\nA. w\nB. x\nC. y\nD. z"),
                    AnswerType::OptionLetter, Some(gold))
                .unwrap()
            }
        })
        .collect()
}

fn base_config(dir: &Path, n: usize) -> RunConfig {
    let qpath = dir.join("q.jsonl");
    write_queries(&qpath, &queries(n)).unwrap();
    let mut cfg = RunConfig {
        seed: Some(21),
        parallel: 4,
        ..RunConfig::default()
    };
    cfg.backend.vanilla_law = Some("overconfident:0.25".into());
    cfg.paths.queries = vec![qpath];
    cfg
}

fn with_out(cfg: &RunConfig, out: PathBuf) -> RunConfig {
    let mut c = cfg.clone();
    c.paths.out = Some(out);
    c
}

fn csv_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

#[test]
fn eval_rows_equal_strategies_composed_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let base = base_config(dir.path(), 48);
    let pool_path = dir.path().join("p.jsonl");
    let mut c = with_out(&base, pool_path.clone());
    c.sampling.n_max = 8;
    cache::run_cache(&c).unwrap();

    for source in [ConfidenceSource::Calibrated, ConfidenceSource::Vanilla] {
        let mut e = with_out(&base, dir.path().join("e.csv"));
        e.paths.pools = vec![pool_path.clone()];
        e.strategy.budgets = vec![2.0, 4.0, 8.0];
        e.strategy.tau = Some(0.7);
        e.strategy.n_max = Some(8);
        e.strategy.conf_source = source;
        let rows = eval::run_eval(&e).unwrap();
        let written = csv_rows(&dir.path().join("e.csv"));
        assert_eq!(rows.len(), written.len());

        let pools = read_pool_file(&pool_path).unwrap().to_pools(source);
        let golds: HashMap<String, CanonicalAnswer> = read_queries(&base.paths.queries[0])
            .unwrap()
            .into_iter()
            .map(|q| (q.id, q.gold.unwrap()))
            .collect();
        for (row, csv_row) in rows.iter().zip(&written) {
            let mut cfg = StrategyConfig::new(row.strategy, row.n_max);
            if row.strategy.uses_threshold() {
                cfg = cfg.with_tau(0.7);
            }
            let (mut correct, mut used) = (0usize, 0usize);
            for p in &pools {
                let o = run_strategy(&mut &*p, &cfg).unwrap();
                used += o.samples_used;
                if o.answer.is_some_and(|a| answers_equal(&a, &golds[p.query_id()])) {
                    correct += 1;
                }
            }
            let n = pools.len() as f64;
            assert_eq!(row.accuracy, correct as f64 / n, "{:?}", row.strategy);
            assert_eq!(row.mean_budget, used as f64 / n);
            assert_eq!(csv_row["strategy"], row.strategy.name());
            let written_acc: f64 = csv_row["accuracy"].parse().unwrap();
            assert!((written_acc - row.accuracy).abs() < 1e-11);
        }
    }
}

#[test]
fn eval_rejects_budgets_deeper_than_the_pools() {
    let dir = tempfile::tempdir().unwrap();
    let base = base_config(dir.path(), 4);
    let pool_path = dir.path().join("p.jsonl");
    let mut c = with_out(&base, pool_path.clone());
    c.sampling.n_max = 3;
    cache::run_cache(&c).unwrap();
    let mut e = with_out(&base, dir.path().join("e.csv"));
    e.paths.pools = vec![pool_path];
    e.strategy.strategies = vec![StrategyKind::Sc];
    e.strategy.budgets = vec![4.0];
    let err = eval::run_eval(&e).unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    assert!(err.to_string().contains("4"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn gen_data_equals_build_tuples_per_query() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_out(&base_config(dir.path(), 12), dir.path().join("t.jsonl"));
    cfg.generation.n_samples = 6;
    gen_data::run_gen_data(&cfg).unwrap();
    let (header, written) = read_tuples(&dir.path().join("t.jsonl")).unwrap();
    assert_eq!(header.unwrap().run_config, cfg.to_json());

    let qs = read_queries(&cfg.paths.queries[0]).unwrap();
    let backends = build_backends(&cfg, &qs).unwrap();
    let gen = GenerationConfig {
        n_samples: 6,
        edt: cfg.edt,
        confidence_prompt: cfg.sampling.confidence_prompt().unwrap(),
        eta: cfg.generation.eta,
        max_tokens: cfg.sampling.max_tokens,
        seed: 21,
    };
    let expected: Vec<_> = qs
        .iter()
        .flat_map(|q| build_tuples(q, &*backends.generator, &gen).unwrap().tuples)
        .collect();
    assert_eq!(written.len(), expected.len());
    for (w, e) in written.iter().zip(&expected) {
        assert_eq!((&w.query_id, &w.response, w.use_for_generation), (&e.query_id, &e.response, e.use_for_generation));
        assert!((w.target_confidence - e.target_confidence).abs() < 1e-11);
    }
}

#[test]
fn report_matches_metric_functions() {
    let dir = tempfile::tempdir().unwrap();
    let base = base_config(dir.path(), 40);
    let pool_path = dir.path().join("p.jsonl");
    let mut c = with_out(&base, pool_path.clone());
    c.sampling.n_max = 5;
    cache::run_cache(&c).unwrap();

    let mut r = with_out(&base, dir.path().join("r.csv"));
    r.paths.pools = vec![pool_path.clone()];
    r.strategy.conf_source = ConfidenceSource::Vanilla;
    let summaries = report::run_report(&r).unwrap();

    let file = read_pool_file(&pool_path).unwrap();
    let golds: HashMap<String, CanonicalAnswer> =
        queries(40).into_iter().map(|q| (q.id, q.gold.unwrap())).collect();
    let record = |rec: &confscale_core::persistence::PoolRecord| {
        let ok = rec.answer.is_some_and(|a| answers_equal(&a, &golds[&rec.query_id]));
        CalibrationRecord::new(rec.confidence_vanilla.unwrap(), ok).unwrap()
    };
    let per_response: Vec<_> = file.records.iter().map(record).collect();
    let per_query: Vec<_> = file.records.iter().filter(|r| r.index == 0).map(record).collect();

    let by_name: HashMap<_, _> = summaries.iter().map(|s| (s.granularity, s)).collect();
    for (name, records) in [("response", &per_response), ("query", &per_query)] {
        let s = by_name[name];
        assert_eq!(s.count, records.len());
        assert!((s.ece - ece(records, 10).unwrap()).abs() < 1e-12);
        assert!((s.auc.unwrap() - auroc(records).unwrap()).abs() < 1e-12);
    }
    // the overconfident column is visibly miscalibrated
    assert!(by_name["response"].ece > 0.05);
}
