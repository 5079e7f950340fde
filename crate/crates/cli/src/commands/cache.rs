//! `cache`: sample and score responses into a resumable pool file.

use std::collections::{BTreeMap, HashMap};

use confscale_core::backend::Backend;
use confscale_core::confidence::p_true;
use confscale_core::persistence::{
    append_records, read_pool_file, read_pool_file_resumable, write_pool_file, PoolFile,
    PoolHeader, PoolRecord,
};
use confscale_core::prompts::prompt_hash;
use confscale_core::sampling::{sample_scored, SamplingConfig};
use confscale_core::Query;

use crate::common::{build_backends, generated_at, input_hash, load_queries, parallel_map, run_seed};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CacheStats {
    pub queries: usize,
    pub responses: usize,
    /// Responses sampled by this run; 0 when the cache was already complete.
    pub new_responses: usize,
    pub failed: Vec<(String, String)>,
}

fn sample_query(
    query: &Query,
    from: usize,
    to: usize,
    backend: &dyn Backend,
    vanilla: Option<&dyn Backend>,
    cfg: &SamplingConfig,
) -> (Vec<PoolRecord>, Option<String>) {
    let mut out = Vec::with_capacity(to.saturating_sub(from));
    for index in from..to {
        let step = sample_scored(query, index, backend, backend, cfg).and_then(|r| {
            let vanilla_conf = match vanilla {
                Some(v) => Some(p_true(query, &r, &cfg.confidence_prompt, v)?),
                None => None,
            };
            Ok(PoolRecord {
                query_id: r.query_id,
                index: r.index,
                temperature: r.temperature,
                text: r.text,
                answer: r.answer,
                confidence_vanilla: vanilla_conf,
                confidence_calibrated: r.confidence,
                extra: BTreeMap::new(),
            })
        });
        match step {
            Ok(rec) => out.push(rec),
            Err(e) => return (out, Some(format!("index {index}: {e}"))),
        }
    }
    (out, None)
}

pub fn run_cache(cfg: &RunConfig) -> Result<CacheStats, CliError> {
    cfg.validate()?;
    let out = cfg.out_path()?.to_path_buf();
    let queries = load_queries(cfg)?;
    let backends = build_backends(cfg, &queries)?;
    let sampling = SamplingConfig {
        temperature: cfg.sampling.temperature,
        max_tokens: cfg.sampling.max_tokens,
        seed: run_seed(cfg)?,
        confidence_prompt: cfg.sampling.confidence_prompt()?,
    };
    let query_paths: Vec<&std::path::Path> = cfg.paths.queries.iter().map(|p| p.as_path()).collect();
    let header = PoolHeader {
        model: backends.generator.name(),
        n_max: cfg.sampling.n_max,
        generated_at: generated_at(cfg),
        prompt_hash: prompt_hash(&sampling.confidence_prompt),
        run_config: Some(cfg.to_json()),
        input_hash: Some(input_hash(&query_paths)?),
        extra: BTreeMap::new(),
    };

    let mut done: HashMap<String, usize> = HashMap::new();
    if out.exists() {
        let (existing, torn) = read_pool_file_resumable(&out)?;
        let Some(existing) = existing else {
            // not even the header survived: start over
            log::warn!("{}: no complete header, starting a fresh cache", out.display());
            std::fs::remove_file(&out).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
            return run_cache(cfg);
        };
        if existing.header.prompt_hash != header.prompt_hash {
            return Err(CliError::Data(format!(
                "{}: pool was built with prompt hash {}, this run uses {}",
                out.display(),
                existing.header.prompt_hash,
                header.prompt_hash
            )));
        }
        if torn {
            log::warn!("{}: dropping a partially written final line", out.display());
            write_pool_file(&out, &existing)?;
        }
        done = existing.depth_by_query();
    }

    let n_max = cfg.sampling.n_max;
    let mut stats = CacheStats {
        queries: queries.len(),
        ..CacheStats::default()
    };
    let pending: Vec<&Query> = queries
        .iter()
        .filter(|q| done.get(&q.id).copied().unwrap_or(0) < n_max)
        .collect();
    let chunk = cfg.parallel.max(1) * 4;
    for batch in pending.chunks(chunk) {
        let results = parallel_map(cfg.parallel, batch, |q| {
            let from = done.get(&q.id).copied().unwrap_or(0);
            sample_query(
                q,
                from,
                n_max,
                &*backends.generator,
                backends.vanilla.as_deref(),
                &sampling,
            )
        })?;
        let mut records = Vec::new();
        for (q, (recs, err)) in batch.iter().zip(results) {
            stats.new_responses += recs.len();
            records.extend(recs);
            if let Some(e) = err {
                log::error!("query {}: {e}", q.id);
                stats.failed.push((q.id.clone(), e));
            }
        }
        if !records.is_empty() || !out.exists() {
            append_records(&out, &header, &records)?;
        }
    }
    if !out.exists() {
        append_records(&out, &header, &[])?;
    }

    // canonical rewrite: current header, query-file order, then any other queries
    let file = read_pool_file(&out)?;
    let rank: HashMap<&str, usize> = queries.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (i, r) in file.records.iter().enumerate() {
        first_seen.entry(r.query_id.clone()).or_insert(i);
    }
    let mut records = file.records;
    records.sort_by_key(|r| {
        let key = match rank.get(r.query_id.as_str()) {
            Some(i) => (0, *i),
            None => (1, first_seen[&r.query_id]),
        };
        (key, r.index)
    });
    stats.responses = records.len();
    write_pool_file(&out, &PoolFile { header, records })?;

    if !stats.failed.is_empty() {
        let summary: Vec<String> = stats
            .failed
            .iter()
            .map(|(q, e)| format!("  {q}: {e}"))
            .collect();
        return Err(CliError::Backend(format!(
            "{} of {} queries could not be completed:\n{}",
            stats.failed.len(),
            stats.queries,
            summary.join("\n")
        )));
    }
    Ok(stats)
}
