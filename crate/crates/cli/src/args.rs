//! Command-line flags. Every flag is optional and, when given, overrides the
//! matching [`RunConfig`] field.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use confscale_core::backend::ApiMode;
use confscale_core::persistence::ConfidenceSource;
use confscale_core::strategies::StrategyKind;

use crate::config::{BackendKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "confscale", version, about = "Confidence-guided test-time scaling toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads across queries.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Base seed (required for synthetic runs).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and score responses into a resumable pool file.
    Cache(CacheArgs),
    /// Build self-calibration training tuples.
    GenData(GenDataArgs),
    /// Accuracy and mean budget per strategy and budget.
    Eval(EvalArgs),
    /// Fit thresholds that match target budgets.
    Calibrate(CalibrateArgs),
    /// ECE, AUC, accuracy and reliability bins.
    Report(ReportArgs),
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

#[derive(Debug, Args, Default)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub api_base: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Model scoring the vanilla confidence column.
    #[arg(long)]
    pub vanilla_model: Option<String>,
    #[arg(long, value_parser = parse_api_mode)]
    pub api_mode: Option<ApiMode>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub top_logprobs: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Synthetic confidence law: calibrated | overconfident:B | fixed:V | beta:A,B,A,B
    #[arg(long)]
    pub law: Option<String>,
    /// Synthetic law for the vanilla confidence column.
    #[arg(long)]
    pub vanilla_law: Option<String>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub invalid_rate: Option<f64>,
    #[arg(long)]
    pub generated_at: Option<String>,
}

fn parse_api_mode(s: &str) -> Result<ApiMode, String> {
    match s {
        "chat" => Ok(ApiMode::Chat),
        "completions" => Ok(ApiMode::Completions),
        _ => Err(format!("unknown API mode {s:?} (chat|completions)")),
    }
}

impl BackendArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let b = &mut cfg.backend;
        set(&mut b.kind, self.backend);
        set(&mut b.api_base, self.api_base.map(Some));
        set(&mut b.model, self.model.map(Some));
        set(&mut b.vanilla_model, self.vanilla_model.map(Some));
        set(&mut b.api_mode, self.api_mode);
        set(&mut b.max_in_flight, self.max_in_flight);
        set(&mut b.top_logprobs, self.top_logprobs);
        set(&mut b.timeout_secs, self.timeout_secs);
        set(&mut b.max_attempts, self.max_attempts);
        set(&mut b.law, self.law);
        set(&mut b.vanilla_law, self.vanilla_law.map(Some));
        set(&mut b.n_candidates, self.n_candidates);
        set(&mut b.concentration, self.concentration);
        set(&mut b.invalid_rate, self.invalid_rate);
        set(&mut b.generated_at, self.generated_at.map(Some));
    }
}

#[derive(Debug, Args, Default)]
pub struct SamplingArgs {
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Confidence instruction: default, i1..i6, or literal text.
    #[arg(long)]
    pub conf_prompt: Option<String>,
    #[arg(long)]
    pub max_queries: Option<usize>,
}

impl SamplingArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let s = &mut cfg.sampling;
        set(&mut s.temperature, self.temperature);
        set(&mut s.max_tokens, self.max_tokens);
        set(&mut s.conf_prompt, self.conf_prompt);
        set(&mut s.max_queries, self.max_queries.map(Some));
    }
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long, num_args = 1..)]
    pub queries: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Responses per query.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, num_args = 1..)]
    pub queries: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Cap per confidence bin; enables balancing.
    #[arg(long)]
    pub balance_cap: Option<usize>,
    #[arg(long)]
    pub balance_bins: Option<usize>,
    /// Fraction drawn from each --queries file, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub mix: Vec<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub edt_m: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau0: Option<f64>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<StrategyKind>,
    /// Comma-separated target budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<f64>,
    /// Sample ceiling for threshold strategies (default: pool depth).
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_parser = parse_conf_source)]
    pub conf_source: Option<ConfidenceSource>,
    /// Fraction of queries held out for calibration.
    #[arg(long)]
    pub holdout_frac: Option<f64>,
}

fn parse_conf_source(s: &str) -> Result<ConfidenceSource, String> {
    s.parse()
}

impl StrategyArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let s = &mut cfg.strategy;
        if !self.strategies.is_empty() {
            s.strategies = self.strategies;
        }
        if !self.budgets.is_empty() {
            s.budgets = self.budgets;
        }
        set(&mut s.n_max, self.n_max.map(Some));
        set(&mut s.k_min, self.k_min);
        set(&mut s.window, self.window);
        set(&mut s.conf_source, self.conf_source);
        set(&mut s.holdout_frac, self.holdout_frac);
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, num_args = 1..)]
    pub pools: Vec<PathBuf>,
    /// Query files carrying gold answers.
    #[arg(long, num_args = 1..)]
    pub queries: Vec<PathBuf>,
    /// Thresholds written by `calibrate`.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Sample from the backend instead of replaying pools.
    #[arg(long)]
    pub live: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, num_args = 1..)]
    pub pools: Vec<PathBuf>,
    /// Fit one threshold set over all pool files.
    #[arg(long)]
    pub global: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub strategy: StrategyArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1..)]
    pub pools: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub queries: Vec<PathBuf>,
    /// JSON Lines of {"confidence", "correct"} instead of pools.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(long, value_parser = parse_conf_source)]
    pub conf_source: Option<ConfidenceSource>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn set_paths(dst: &mut Vec<PathBuf>, v: Vec<PathBuf>) {
    if !v.is_empty() {
        *dst = v;
    }
}

impl Cli {
    /// Layers the flags onto `cfg`.
    pub fn apply(self, cfg: &mut RunConfig) -> Command {
        set(&mut cfg.parallel, self.parallel);
        set(&mut cfg.seed, self.seed.map(Some));
        let mut command = self.command;
        match &mut command {
            Command::Cache(a) => {
                set_paths(&mut cfg.paths.queries, std::mem::take(&mut a.queries));
                set(&mut cfg.paths.out, a.out.take().map(Some));
                set(&mut cfg.sampling.n_max, a.n_max);
                std::mem::take(&mut a.sampling).apply(cfg);
                std::mem::take(&mut a.backend).apply(cfg);
            }
            Command::GenData(a) => {
                set_paths(&mut cfg.paths.queries, std::mem::take(&mut a.queries));
                set(&mut cfg.paths.out, a.out.take().map(Some));
                let g = &mut cfg.generation;
                set(&mut g.n_samples, a.n_samples);
                set(&mut g.eta, a.eta);
                set(&mut g.balance_cap, a.balance_cap.map(Some));
                set(&mut g.n_bins, a.balance_bins);
                if !a.mix.is_empty() {
                    g.mix = std::mem::take(&mut a.mix);
                }
                set(&mut cfg.edt.t0, a.t0);
                set(&mut cfg.edt.m, a.edt_m);
                set(&mut cfg.edt.gamma, a.gamma);
                set(&mut cfg.edt.tau0, a.tau0);
                std::mem::take(&mut a.sampling).apply(cfg);
                std::mem::take(&mut a.backend).apply(cfg);
            }
            Command::Eval(a) => {
                set_paths(&mut cfg.paths.pools, std::mem::take(&mut a.pools));
                set_paths(&mut cfg.paths.queries, std::mem::take(&mut a.queries));
                set(&mut cfg.paths.thresholds, a.thresholds.take().map(Some));
                set(&mut cfg.paths.out, a.out.take().map(Some));
                set(&mut cfg.strategy.tau, a.tau.map(Some));
                if a.live {
                    cfg.strategy.live = true;
                }
                take_strategy(&mut a.strategy).apply(cfg);
                std::mem::take(&mut a.sampling).apply(cfg);
                std::mem::take(&mut a.backend).apply(cfg);
            }
            Command::Calibrate(a) => {
                set_paths(&mut cfg.paths.pools, std::mem::take(&mut a.pools));
                set(&mut cfg.paths.out, a.out.take().map(Some));
                if a.global {
                    cfg.strategy.global = true;
                }
                take_strategy(&mut a.strategy).apply(cfg);
            }
            Command::Report(a) => {
                set_paths(&mut cfg.paths.pools, std::mem::take(&mut a.pools));
                set_paths(&mut cfg.paths.queries, std::mem::take(&mut a.queries));
                set(&mut cfg.paths.records, a.records.take().map(Some));
                set(&mut cfg.paths.out, a.out.take().map(Some));
                set(&mut cfg.metrics.n_bins, a.n_bins);
                set(&mut cfg.strategy.conf_source, a.conf_source);
            }
        }
        command
    }
}

fn take_strategy(a: &mut StrategyArgs) -> StrategyArgs {
    StrategyArgs {
        strategies: std::mem::take(&mut a.strategies),
        budgets: std::mem::take(&mut a.budgets),
        n_max: a.n_max.take(),
        k_min: a.k_min.take(),
        window: a.window.take(),
        conf_source: a.conf_source.take(),
        holdout_frac: a.holdout_frac.take(),
    }
}
