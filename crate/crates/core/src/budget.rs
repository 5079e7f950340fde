//! Sample-budget accounting and budget-matched threshold calibration.

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::answer::ResponsePool;
use crate::numfmt;
use crate::seed::rng_from;
use crate::strategies::{run_strategy, StrategyConfig, StrategyError, StrategyOutcome, NEVER_STOP_TAU};

/// Bisection stops once the bracket is narrower than this.
pub const TAU_RESOLUTION: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("no outcomes")]
    EmptyInput,
    #[error("{0} has no threshold to calibrate")]
    NotCalibratable(String),
    #[error("target budget {target} is outside [1, {n_max}]")]
    TargetOutOfRange { target: f64, n_max: usize },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub mean_samples: f64,
    pub per_query_samples: Vec<usize>,
    #[serde(serialize_with = "numfmt::ser_opt_f64")]
    pub target: Option<f64>,
    #[serde(serialize_with = "numfmt::ser_opt_f64")]
    pub threshold_used: Option<f64>,
}

pub fn measure_budget(outcomes: &[StrategyOutcome]) -> Result<BudgetReport, BudgetError> {
    if outcomes.is_empty() {
        return Err(BudgetError::EmptyInput);
    }
    let per_query_samples: Vec<usize> = outcomes.iter().map(|o| o.samples_used).collect();
    let total: usize = per_query_samples.iter().sum();
    Ok(BudgetReport {
        mean_samples: total as f64 / per_query_samples.len() as f64,
        per_query_samples,
        target: None,
        threshold_used: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub tau: f64,
    pub report: BudgetReport,
    /// Set when no threshold brackets the target and the closest endpoint
    /// was used instead.
    pub unreachable: bool,
}

/// Runs `cfg` with threshold `tau` over every pool and reports the budget.
pub fn budget_at(
    pools: &[ResponsePool],
    cfg: &StrategyConfig,
    tau: f64,
) -> Result<BudgetReport, BudgetError> {
    let cfg = StrategyConfig { tau: Some(tau), ..*cfg };
    let outcomes = pools
        .iter()
        .map(|p| run_strategy(&mut &*p, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = measure_budget(&outcomes)?;
    report.threshold_used = Some(tau);
    Ok(report)
}

/// Finds the threshold whose mean budget over `pools` is closest to
/// `target`.
///
/// The mean budget is a nondecreasing step function of tau, so plain
/// root-finding may have no solution. Bisection over
/// `[0, NEVER_STOP_TAU]` narrows a bracket `lo < hi` with
/// `budget(lo) < target <= budget(hi)`, then the bracket end with the
/// closer budget wins (ties go to the smaller budget). Candidate taus are
/// rounded to the serialized precision first so that replaying the written
/// value reproduces the reported budget exactly.
pub fn calibrate_threshold(
    pools: &[ResponsePool],
    cfg: &StrategyConfig,
    target: f64,
) -> Result<Calibration, BudgetError> {
    if !cfg.kind.uses_threshold() {
        return Err(BudgetError::NotCalibratable(cfg.kind.to_string()));
    }
    if !(target >= 1.0 && target <= cfg.n_max as f64) {
        return Err(BudgetError::TargetOutOfRange {
            target,
            n_max: cfg.n_max,
        });
    }
    let eval = |tau: f64| budget_at(pools, cfg, tau);
    let finish = |tau: f64, mut report: BudgetReport, unreachable: bool| {
        report.target = Some(target);
        Calibration {
            tau,
            report,
            unreachable,
        }
    };

    let (mut lo, mut hi) = (0.0, NEVER_STOP_TAU);
    let mut lo_report = eval(lo)?;
    if lo_report.mean_samples >= target {
        let exact = lo_report.mean_samples == target;
        if !exact {
            log::warn!(
                "{}: target budget {target} is below the minimum {} reachable",
                cfg.kind,
                lo_report.mean_samples
            );
        }
        return Ok(finish(lo, lo_report, !exact));
    }
    let mut hi_report = eval(hi)?;
    if hi_report.mean_samples < target {
        log::warn!(
            "{}: target budget {target} is above the maximum {} reachable",
            cfg.kind,
            hi_report.mean_samples
        );
        return Ok(finish(hi, hi_report, true));
    }
    while hi - lo > TAU_RESOLUTION {
        let mid = numfmt::round_sig(0.5 * (lo + hi));
        if mid <= lo || mid >= hi {
            break;
        }
        let r = eval(mid)?;
        if r.mean_samples < target {
            lo = mid;
            lo_report = r;
        } else {
            hi = mid;
            hi_report = r;
        }
    }
    let below = target - lo_report.mean_samples;
    let above = hi_report.mean_samples - target;
    Ok(if below <= above {
        finish(lo, lo_report, false)
    } else {
        finish(hi, hi_report, false)
    })
}

/// Deterministic split of `0..n` into (calibration, evaluation) indices;
/// `frac` of the items go to calibration. Both lists are sorted.
pub fn holdout_split(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(&[b"holdout", &seed.to_le_bytes()]));
    let k = ((n as f64) * frac.clamp(0.0, 1.0)).round() as usize;
    let mut calib = idx[..k].to_vec();
    let mut eval = idx[k..].to_vec();
    calib.sort_unstable();
    eval.sort_unstable();
    (calib, eval)
}
