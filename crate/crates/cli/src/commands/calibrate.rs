//! `calibrate`: budget-matched thresholds for the threshold strategies.

use std::path::Path;

use confscale_core::budget::{calibrate_threshold, holdout_split};
use confscale_core::numfmt;
use confscale_core::strategies::{StrategyConfig, StrategyKind};
use confscale_core::ResponsePool;
use serde::{Deserialize, Serialize};

use crate::common::{input_hash, load_pool_datasets, write_text_atomic, Dataset};
use crate::config::RunConfig;
use crate::error::CliError;

/// Label used when thresholds are fitted on all pool files together.
pub const GLOBAL: &str = "global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub dataset: String,
    pub strategy: StrategyKind,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub target: f64,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub tau: f64,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub achieved_budget: f64,
    pub n_max: usize,
    pub k_min: usize,
    pub unreachable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub input_hash: String,
    pub run_config: serde_json::Value,
    pub thresholds: Vec<ThresholdEntry>,
}

impl ThresholdFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Entry for `(strategy, target)`, preferring `dataset`, then the
    /// global fit, then any dataset.
    pub fn lookup(&self, dataset: &str, strategy: StrategyKind, target: f64) -> Option<&ThresholdEntry> {
        let matching = || {
            self.thresholds
                .iter()
                .filter(move |e| e.strategy == strategy && (e.target - target).abs() < 1e-9)
        };
        matching()
            .find(|e| e.dataset == dataset)
            .or_else(|| matching().find(|e| e.dataset == GLOBAL))
            .or_else(|| matching().next())
    }
}

pub fn min_depth(pools: &[ResponsePool]) -> usize {
    pools.iter().map(|p| p.len()).min().unwrap_or(0)
}

/// Calibration pools: all pools, or the calibration side of the holdout split.
pub fn calibration_subset(pools: &[ResponsePool], cfg: &RunConfig) -> Vec<ResponsePool> {
    if cfg.strategy.holdout_frac > 0.0 {
        let (calib, _) = holdout_split(pools.len(), cfg.strategy.holdout_frac, cfg.seed.unwrap_or(0));
        calib.into_iter().map(|i| pools[i].clone()).collect()
    } else {
        pools.to_vec()
    }
}

pub fn threshold_config(cfg: &RunConfig, kind: StrategyKind, n_max: usize) -> StrategyConfig {
    StrategyConfig::new(kind, n_max)
        .with_k_min(cfg.strategy.k_min)
        .with_window(cfg.strategy.window)
}

pub fn calibrate_dataset(
    cfg: &RunConfig,
    label: &str,
    pools: &[ResponsePool],
) -> Result<Vec<ThresholdEntry>, CliError> {
    let calib = calibration_subset(pools, cfg);
    if calib.is_empty() {
        return Err(CliError::Data(format!("{label}: no pools to calibrate on")));
    }
    let n_max = cfg.strategy.n_max.unwrap_or_else(|| min_depth(&calib));
    let mut out = Vec::new();
    for kind in cfg.strategy.strategies.iter().filter(|k| k.uses_threshold()) {
        for &target in &cfg.strategy.budgets {
            let c = calibrate_threshold(&calib, &threshold_config(cfg, *kind, n_max), target)?;
            if c.unreachable {
                log::warn!(
                    "{label}/{kind}: target {target} unreachable; closest budget {}",
                    c.report.mean_samples
                );
            }
            out.push(ThresholdEntry {
                dataset: label.to_string(),
                strategy: *kind,
                target,
                tau: c.tau,
                achieved_budget: c.report.mean_samples,
                n_max,
                k_min: cfg.strategy.k_min,
                unreachable: c.unreachable,
            });
        }
    }
    Ok(out)
}

pub fn run_calibrate(cfg: &RunConfig) -> Result<ThresholdFile, CliError> {
    cfg.validate()?;
    let out = cfg.out_path()?.to_path_buf();
    let datasets = load_pool_datasets(&cfg.paths.pools, cfg.strategy.conf_source)?;
    let datasets = if cfg.strategy.global {
        vec![Dataset {
            label: GLOBAL.to_string(),
            pools: datasets.into_iter().flat_map(|d| d.pools).collect(),
        }]
    } else {
        datasets
    };
    let mut thresholds = Vec::new();
    for d in &datasets {
        thresholds.extend(calibrate_dataset(cfg, &d.label, &d.pools)?);
    }
    let pool_paths: Vec<&Path> = cfg.paths.pools.iter().map(|p| p.as_path()).collect();
    let file = ThresholdFile {
        input_hash: input_hash(&pool_paths)?,
        run_config: cfg.to_json(),
        thresholds,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("json");
    text.push('\n');
    write_text_atomic(&out, &text)?;
    Ok(file)
}
