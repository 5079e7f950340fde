//! `eval`: accuracy and mean budget per (strategy, budget).

use std::collections::HashMap;
use std::path::Path;

use confscale_core::budget::{holdout_split, measure_budget};
use confscale_core::metrics::accuracy;
use confscale_core::numfmt::fmt_decimal;
use confscale_core::sampling::{LiveSource, SamplingConfig};
use confscale_core::strategies::{
    run_strategy, StrategyConfig, StrategyError, StrategyKind, StrategyOutcome,
};
use confscale_core::{CanonicalAnswer, Query, ResponsePool};

use super::calibrate::{calibrate_dataset, min_depth, threshold_config, ThresholdFile, GLOBAL};
use crate::common::{
    build_backends, input_hash, load_pool_datasets, load_queries, opt_decimal, parallel_map,
    provenance_lines, run_seed, write_text_atomic,
};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub strategy: StrategyKind,
    pub budget: f64,
    pub n_max: usize,
    pub accuracy: f64,
    pub mean_budget: f64,
    pub threshold: Option<f64>,
    pub queries: usize,
}

/// One strategy configuration to run, with the budget it stands for.
struct Plan {
    budget: f64,
    cfg: StrategyConfig,
}

fn budget_as_depth(budget: f64) -> Result<usize, CliError> {
    if budget >= 1.0 && budget.fract() == 0.0 {
        Ok(budget as usize)
    } else {
        Err(CliError::Usage(format!(
            "fixed-budget strategies need whole-number budgets, got {budget}"
        )))
    }
}

/// Expands strategies x budgets. Threshold strategies get their tau from
/// `--tau`, the thresholds file, or `calibrate` (in that order).
fn plans(
    cfg: &RunConfig,
    default_n_max: Option<usize>,
    mut calibrate: impl FnMut(StrategyKind, f64) -> Result<Option<(f64, usize)>, CliError>,
) -> Result<Vec<Plan>, CliError> {
    let s = &cfg.strategy;
    let mut out = Vec::new();
    for &kind in &s.strategies {
        if kind == StrategyKind::Pass1 {
            out.push(Plan {
                budget: 1.0,
                cfg: StrategyConfig::new(kind, 1),
            });
            continue;
        }
        for &budget in &s.budgets {
            if !kind.uses_threshold() {
                let n = budget_as_depth(budget)?;
                out.push(Plan {
                    budget,
                    cfg: threshold_config(cfg, kind, n),
                });
                continue;
            }
            let (tau, n_max) = match s.tau {
                Some(t) => {
                    let n = s.n_max.or(default_n_max).ok_or_else(|| {
                        CliError::Usage("--n-max is required with a fixed --tau in live mode".into())
                    })?;
                    (t, n)
                }
                None => calibrate(kind, budget)?.ok_or_else(|| {
                    CliError::Usage(format!(
                        "no threshold for {kind} at budget {budget}: pass --tau or --thresholds"
                    ))
                })?,
            };
            out.push(Plan {
                budget,
                cfg: threshold_config(cfg, kind, n_max).with_tau(tau),
            });
        }
    }
    Ok(out)
}

fn outcome_answer(r: Result<StrategyOutcome, StrategyError>) -> Result<StrategyOutcome, CliError> {
    match r {
        Ok(o) => Ok(o),
        // no extractable answer: the query counts as wrong
        Err(StrategyError::AllInvalid(n)) => Ok(StrategyOutcome {
            answer: None,
            samples_used: n,
            trace: Vec::new(),
        }),
        Err(e) => Err(e.into()),
    }
}

fn score(plan: &Plan, outcomes: &[StrategyOutcome], golds: &[CanonicalAnswer]) -> Result<EvalRow, CliError> {
    let pairs: Vec<(Option<CanonicalAnswer>, CanonicalAnswer)> =
        outcomes.iter().map(|o| o.answer).zip(golds.iter().copied()).collect();
    Ok(EvalRow {
        strategy: plan.cfg.kind,
        budget: plan.budget,
        n_max: plan.cfg.n_max,
        accuracy: accuracy(&pairs)?,
        mean_budget: measure_budget(outcomes)?.mean_samples,
        threshold: plan.cfg.tau,
        queries: outcomes.len(),
    })
}

fn gold_for(pools: &[ResponsePool], queries: &HashMap<String, Query>) -> Result<Vec<CanonicalAnswer>, CliError> {
    pools
        .iter()
        .map(|p| {
            let q = queries
                .get(p.query_id())
                .ok_or_else(|| CliError::Data(format!("pool query {:?} is not in --queries", p.query_id())))?;
            q.gold
                .ok_or_else(|| CliError::Data(format!("query {:?} has no gold answer", q.id)))
        })
        .collect()
}

fn eval_replay(cfg: &RunConfig) -> Result<Vec<EvalRow>, CliError> {
    let datasets = load_pool_datasets(&cfg.paths.pools, cfg.strategy.conf_source)?;
    let label = if datasets.len() == 1 {
        datasets[0].label.clone()
    } else {
        GLOBAL.to_string()
    };
    let all: Vec<ResponsePool> = datasets.into_iter().flat_map(|d| d.pools).collect();
    if all.is_empty() {
        return Err(CliError::Data("pool files contain no responses".into()));
    }
    let queries: HashMap<String, Query> = load_queries(cfg)?.into_iter().map(|q| (q.id.clone(), q)).collect();
    let thresholds = cfg.paths.thresholds.as_deref().map(ThresholdFile::read).transpose()?;

    let mut fitted: Option<Vec<_>> = None;
    let plans = plans(cfg, Some(min_depth(&all)), |kind, budget| {
        if let Some(file) = &thresholds {
            return Ok(file.lookup(&label, kind, budget).map(|e| (e.tau, e.n_max)));
        }
        if fitted.is_none() {
            fitted = Some(calibrate_dataset(cfg, &label, &all)?);
        }
        Ok(fitted
            .as_ref()
            .and_then(|f| f.iter().find(|e| e.strategy == kind && e.target == budget))
            .map(|e| (e.tau, e.n_max)))
    })?;

    let eval_pools: Vec<ResponsePool> = if cfg.strategy.holdout_frac > 0.0 {
        let (_, idx) = holdout_split(all.len(), cfg.strategy.holdout_frac, cfg.seed.unwrap_or(0));
        idx.into_iter().map(|i| all[i].clone()).collect()
    } else {
        all
    };
    let golds = gold_for(&eval_pools, &queries)?;
    let mut rows = Vec::with_capacity(plans.len());
    for plan in &plans {
        let outcomes = parallel_map(cfg.parallel, &eval_pools, |p| {
            outcome_answer(run_strategy(&mut &*p, &plan.cfg))
        })?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        rows.push(score(plan, &outcomes, &golds)?);
    }
    Ok(rows)
}

fn eval_live(cfg: &RunConfig) -> Result<Vec<EvalRow>, CliError> {
    let queries = load_queries(cfg)?;
    let golds: Vec<CanonicalAnswer> = queries
        .iter()
        .map(|q| q.gold.ok_or_else(|| CliError::Data(format!("query {:?} has no gold answer", q.id))))
        .collect::<Result<_, _>>()?;
    let thresholds = cfg.paths.thresholds.as_deref().map(ThresholdFile::read).transpose()?;
    let plans = plans(cfg, None, |kind, budget| {
        Ok(thresholds
            .as_ref()
            .and_then(|f| f.lookup(GLOBAL, kind, budget))
            .map(|e| (e.tau, e.n_max)))
    })?;
    let backends = build_backends(cfg, &queries)?;
    let sampling = SamplingConfig {
        temperature: cfg.sampling.temperature,
        max_tokens: cfg.sampling.max_tokens,
        seed: run_seed(cfg)?,
        confidence_prompt: cfg.sampling.confidence_prompt()?,
    };
    // per query, every plan reads the same lazily drawn sequence
    let per_query = parallel_map(cfg.parallel, &queries, |q| {
        let mut source = LiveSource::new(q, &*backends.generator, &sampling);
        plans
            .iter()
            .map(|p| outcome_answer(run_strategy(&mut source, &p.cfg)))
            .collect::<Result<Vec<_>, _>>()
            .map(|outs| (outs, source.drawn().len()))
    })?;
    let mut by_plan: Vec<Vec<StrategyOutcome>> = vec![Vec::with_capacity(queries.len()); plans.len()];
    for r in per_query {
        let (outs, drawn) = r?;
        log::debug!("live query drew {drawn} samples");
        for (slot, o) in by_plan.iter_mut().zip(outs) {
            slot.push(o);
        }
    }
    plans
        .iter()
        .zip(by_plan)
        .map(|(p, outs)| score(p, &outs, &golds))
        .collect()
}

pub fn render_csv(cfg: &RunConfig, input_hash: &str, rows: &[EvalRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "budget",
        "n_max",
        "accuracy",
        "mean_budget",
        "threshold",
        "conf_source",
        "queries",
    ])?;
    let source = serde_json::to_value(cfg.strategy.conf_source).expect("json");
    let source = source.as_str().unwrap_or_default().to_string();
    for r in rows {
        w.write_record([
            r.strategy.name().to_string(),
            fmt_decimal(r.budget),
            r.n_max.to_string(),
            fmt_decimal(r.accuracy),
            fmt_decimal(r.mean_budget),
            opt_decimal(r.threshold),
            source.clone(),
            r.queries.to_string(),
        ])?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
        .expect("csv is utf-8");
    Ok(provenance_lines(cfg, input_hash) + &body)
}

pub fn run_eval(cfg: &RunConfig) -> Result<Vec<EvalRow>, CliError> {
    cfg.validate()?;
    let out = cfg.out_path()?.to_path_buf();
    let rows = if cfg.strategy.live {
        eval_live(cfg)?
    } else {
        eval_replay(cfg)?
    };
    let mut inputs: Vec<&Path> = cfg.paths.pools.iter().map(|p| p.as_path()).collect();
    inputs.extend(cfg.paths.queries.iter().map(|p| p.as_path()));
    inputs.extend(cfg.paths.thresholds.as_deref());
    let text = render_csv(cfg, &input_hash(&inputs)?, &rows)?;
    write_text_atomic(&out, &text)?;
    Ok(rows)
}
