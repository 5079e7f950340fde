//! `report`: ECE, AUC, accuracy and reliability bins.

use std::collections::HashMap;
use std::path::Path;

use confscale_core::answer::answers_equal;
use confscale_core::metrics::{accuracy, auroc, reliability_bins, CalibrationRecord, MetricsError};
use confscale_core::numfmt::fmt_decimal;
use confscale_core::persistence::read_bytes;
use confscale_core::strategies::{run_strategy, StrategyConfig, StrategyKind};
use confscale_core::{CanonicalAnswer, Query, ResponsePool};

use crate::common::{
    input_hash, load_pool_datasets, load_queries, opt_decimal, provenance_lines, write_text_atomic,
};
use crate::config::RunConfig;
use crate::error::CliError;

/// Metrics for one granularity (per response, per query, or raw records).
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub granularity: &'static str,
    pub records: Vec<CalibrationRecord>,
    pub acc_pass1: Option<f64>,
    pub acc_sc: Option<f64>,
    pub mean_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub granularity: &'static str,
    pub count: usize,
    pub ece: f64,
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub acc_pass1: Option<f64>,
    pub acc_sc: Option<f64>,
    pub mean_budget: Option<f64>,
}

fn is_correct(answer: Option<CanonicalAnswer>, gold: &CanonicalAnswer) -> bool {
    answer.is_some_and(|a| answers_equal(&a, gold))
}

/// Per-response records (every scored response) and per-query records
/// (the first response of each pool).
pub fn blocks_from_pools(
    pools: &[ResponsePool],
    queries: &HashMap<String, Query>,
) -> Result<Vec<Block>, CliError> {
    let mut per_response = Vec::new();
    let mut per_query = Vec::new();
    let mut pass1 = Vec::new();
    let mut sc = Vec::new();
    let mut unscored = 0usize;
    for p in pools {
        let gold = queries
            .get(p.query_id())
            .and_then(|q| q.gold)
            .ok_or_else(|| CliError::Data(format!("no gold answer for query {:?}", p.query_id())))?;
        for (i, r) in p.responses().iter().enumerate() {
            let Some(c) = r.confidence else {
                unscored += 1;
                continue;
            };
            let rec = CalibrationRecord::new(c, is_correct(r.answer, &gold))?;
            per_response.push(rec);
            if i == 0 {
                per_query.push(rec);
            }
        }
        let first = p.responses().first().and_then(|r| r.answer);
        pass1.push((first, gold));
        let vote = run_strategy(&mut &*p, &StrategyConfig::new(StrategyKind::Sc, p.len()))
            .ok()
            .and_then(|o| o.answer);
        sc.push((vote, gold));
    }
    if unscored > 0 {
        log::warn!("{unscored} responses have no confidence in the selected column and were skipped");
    }
    let acc_pass1 = Some(accuracy(&pass1)?);
    let acc_sc = Some(accuracy(&sc)?);
    let depth: usize = pools.iter().map(|p| p.len()).sum();
    let mean_budget = Some(depth as f64 / pools.len() as f64);
    Ok(vec![
        Block {
            granularity: "response",
            records: per_response,
            acc_pass1,
            acc_sc,
            mean_budget,
        },
        Block {
            granularity: "query",
            records: per_query,
            acc_pass1,
            acc_sc,
            mean_budget,
        },
    ])
}

/// Records file: JSON Lines of `{"confidence": c, "correct": bool}`.
pub fn block_from_records(path: &Path) -> Result<Block, CliError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: CalibrationRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(CalibrationRecord::new(r.confidence, r.correct)?);
    }
    Ok(Block {
        granularity: "record",
        records,
        acc_pass1: None,
        acc_sc: None,
        mean_budget: None,
    })
}

pub fn summarize(block: &Block, n_bins: usize) -> Result<Summary, CliError> {
    let bins = reliability_bins(&block.records, n_bins)?;
    let auc = match auroc(&block.records) {
        Ok(a) => Some(a),
        Err(MetricsError::DegenerateLabels) => None,
        Err(e) => return Err(e.into()),
    };
    let correct = block.records.iter().filter(|r| r.correct).count();
    Ok(Summary {
        granularity: block.granularity,
        count: block.records.len(),
        ece: bins.ece(),
        auc,
        accuracy: correct as f64 / block.records.len() as f64,
        acc_pass1: block.acc_pass1,
        acc_sc: block.acc_sc,
        mean_budget: block.mean_budget,
    })
}

pub fn render_csv(cfg: &RunConfig, input_hash: &str, blocks: &[Block]) -> Result<(String, Vec<Summary>), CliError> {
    let n_bins = cfg.metrics.n_bins;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "granularity",
        "kind",
        "bin",
        "lower",
        "upper",
        "count",
        "mean_confidence",
        "accuracy",
        "ece",
        "auc",
        "acc_pass1",
        "acc_sc",
        "mean_budget",
    ])?;
    let mut summaries = Vec::new();
    for b in blocks {
        let bins = reliability_bins(&b.records, n_bins)?;
        for (i, bin) in bins.bins.iter().enumerate() {
            w.write_record([
                b.granularity.to_string(),
                "bin".into(),
                (i + 1).to_string(),
                fmt_decimal(bin.lower),
                fmt_decimal(bin.upper),
                bin.count.to_string(),
                opt_decimal(bin.mean_confidence),
                opt_decimal(bin.accuracy),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let s = summarize(b, n_bins)?;
        w.write_record([
            b.granularity.to_string(),
            "summary".into(),
            String::new(),
            String::new(),
            String::new(),
            s.count.to_string(),
            String::new(),
            fmt_decimal(s.accuracy),
            fmt_decimal(s.ece),
            opt_decimal(s.auc),
            opt_decimal(s.acc_pass1),
            opt_decimal(s.acc_sc),
            opt_decimal(s.mean_budget),
        ])?;
        summaries.push(s);
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
        .expect("csv is utf-8");
    Ok((provenance_lines(cfg, input_hash) + &body, summaries))
}

pub fn run_report(cfg: &RunConfig) -> Result<Vec<Summary>, CliError> {
    cfg.validate()?;
    let out = cfg.out_path()?.to_path_buf();
    let mut inputs: Vec<&Path> = Vec::new();
    let blocks = match &cfg.paths.records {
        Some(path) => {
            inputs.push(path);
            vec![block_from_records(path)?]
        }
        None => {
            let datasets = load_pool_datasets(&cfg.paths.pools, cfg.strategy.conf_source)?;
            let pools: Vec<ResponsePool> = datasets.into_iter().flat_map(|d| d.pools).collect();
            if pools.is_empty() {
                return Err(CliError::Data("pool files contain no responses".into()));
            }
            let queries: HashMap<String, Query> =
                load_queries(cfg)?.into_iter().map(|q| (q.id.clone(), q)).collect();
            inputs.extend(cfg.paths.pools.iter().map(|p| p.as_path()));
            inputs.extend(cfg.paths.queries.iter().map(|p| p.as_path()));
            blocks_from_pools(&pools, &queries)?
        }
    };
    let (text, summaries) = render_csv(cfg, &input_hash(&inputs)?, &blocks)?;
    write_text_atomic(&out, &text)?;
    Ok(summaries)
}
