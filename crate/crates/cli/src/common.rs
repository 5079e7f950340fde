//! Helpers shared by the subcommands.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use confscale_core::backend::{
    Backend, ConfidenceLaw, OpenAiBackend, OpenAiConfig, RetryPolicy, SyntheticBackend,
    SyntheticModelSpec, SyntheticSettings,
};
use confscale_core::persistence::{self, read_queries, ConfidenceSource, PoolFile};
use confscale_core::{Query, ResponsePool};
use rayon::prelude::*;

use crate::config::{BackendKind, RunConfig};
use crate::error::CliError;

/// Header stamp for synthetic pools, which must not depend on the clock.
pub const FIXED_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

pub struct Backends {
    /// Samples responses and scores the calibrated confidence column.
    pub generator: Box<dyn Backend>,
    /// Scores the vanilla confidence column, when configured.
    pub vanilla: Option<Box<dyn Backend>>,
}

fn synthetic(cfg: &RunConfig, queries: &[Query], law: &str) -> Result<SyntheticBackend, CliError> {
    let seed = cfg.require_seed()?;
    let law = ConfidenceLaw::parse(law).map_err(|e| CliError::Usage(e.to_string()))?;
    let settings = SyntheticSettings {
        n_candidates: cfg.backend.n_candidates,
        concentration: cfg.backend.concentration,
        invalid_rate: cfg.backend.invalid_rate,
    };
    let spec = SyntheticModelSpec::for_queries(queries, settings, law, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(SyntheticBackend::new(spec)?)
}

fn openai(cfg: &RunConfig, model: Option<&str>) -> Result<OpenAiBackend, CliError> {
    let b = &cfg.backend;
    let mut oc = OpenAiConfig::new(
        b.api_base.clone().unwrap_or_default(),
        model.unwrap_or_default(),
    )
    .with_env_key();
    oc.mode = b.api_mode;
    oc.max_in_flight = b.max_in_flight.max(1);
    oc.top_logprobs = b.top_logprobs;
    oc.timeout = std::time::Duration::from_secs(b.timeout_secs);
    oc.retry = RetryPolicy {
        max_attempts: b.max_attempts.max(1),
        ..RetryPolicy::default()
    };
    Ok(OpenAiBackend::new(oc)?)
}

/// Builds the configured backends. Configuration problems (missing key,
/// missing seed) surface here, before any request is sent.
pub fn build_backends(cfg: &RunConfig, queries: &[Query]) -> Result<Backends, CliError> {
    match cfg.backend.kind {
        BackendKind::Synthetic => {
            let generator = Box::new(synthetic(cfg, queries, &cfg.backend.law)?);
            let vanilla = match &cfg.backend.vanilla_law {
                Some(law) => Some(Box::new(synthetic(cfg, queries, law)?) as Box<dyn Backend>),
                None => None,
            };
            Ok(Backends { generator, vanilla })
        }
        BackendKind::Openai => {
            let generator = Box::new(openai(cfg, cfg.backend.model.as_deref())?);
            let vanilla = match &cfg.backend.vanilla_model {
                Some(m) => Some(Box::new(openai(cfg, Some(m))?) as Box<dyn Backend>),
                None => None,
            };
            Ok(Backends { generator, vanilla })
        }
    }
}

/// Seed used for request seeds: mandatory for synthetic runs, 0 otherwise.
pub fn run_seed(cfg: &RunConfig) -> Result<u64, CliError> {
    match cfg.backend.kind {
        BackendKind::Synthetic => cfg.require_seed(),
        BackendKind::Openai => Ok(cfg.seed.unwrap_or(0)),
    }
}

pub fn generated_at(cfg: &RunConfig) -> String {
    if let Some(s) = &cfg.backend.generated_at {
        return s.clone();
    }
    match cfg.backend.kind {
        BackendKind::Synthetic => FIXED_TIMESTAMP.to_string(),
        BackendKind::Openai => {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        }
    }
}

/// Reads every `--queries` file, in order, rejecting ids repeated across files.
pub fn load_query_files(paths: &[PathBuf]) -> Result<Vec<Vec<Query>>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("--queries is required".into()));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let qs = read_queries(p)?;
        for q in &qs {
            if !seen.insert(q.id.clone()) {
                return Err(CliError::Data(format!(
                    "{}: query id {:?} appears in more than one file",
                    p.display(),
                    q.id
                )));
            }
        }
        out.push(qs);
    }
    Ok(out)
}

pub fn load_queries(cfg: &RunConfig) -> Result<Vec<Query>, CliError> {
    let mut all: Vec<Query> = load_query_files(&cfg.paths.queries)?.into_iter().flatten().collect();
    if let Some(cap) = cfg.sampling.max_queries {
        all.truncate(cap);
    }
    Ok(all)
}

/// Label of a pool file: its name without `.gz` and `.jsonl`.
pub fn dataset_label(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    let name = name.strip_suffix(".jsonl").unwrap_or(name);
    name.to_string()
}

pub struct Dataset {
    pub label: String,
    pub pools: Vec<ResponsePool>,
}

pub fn load_pool_datasets(
    paths: &[PathBuf],
    source: ConfidenceSource,
) -> Result<Vec<Dataset>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("--pools is required".into()));
    }
    paths
        .iter()
        .map(|p| {
            let file: PoolFile = persistence::read_pool_file(p)?;
            Ok(Dataset {
                label: dataset_label(p),
                pools: file.to_pools(source),
            })
        })
        .collect()
}

/// Content hash of the given input files.
pub fn input_hash(paths: &[&Path]) -> Result<String, CliError> {
    Ok(persistence::content_hash(paths)?)
}

/// Maps `f` over `items` on a pool of `parallel` threads; output keeps input order.
pub fn parallel_map<T: Sync, R: Send>(
    parallel: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync + Send,
) -> Result<Vec<R>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// `# key: value` lines placed before CSV content.
pub fn provenance_lines(cfg: &RunConfig, input_hash: &str) -> String {
    format!(
        "# run_config: {}\n# input_hash: {}\n",
        serde_json::to_string(&cfg.to_json()).expect("json"),
        input_hash
    )
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let mut tmp = path.file_name().unwrap_or_default().to_os_string();
    tmp.push(".tmp");
    let tmp = path.with_file_name(tmp);
    fs::write(&tmp, text).map_err(|e| CliError::Usage(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn opt_decimal(v: Option<f64>) -> String {
    v.map(confscale_core::numfmt::fmt_decimal).unwrap_or_default()
}
