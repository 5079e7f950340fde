//! `gen-data`: synthesize self-calibration training tuples.

use confscale_core::dataset::{balance_bins, build_tuples, BuildWarning, GenerationConfig};
use confscale_core::persistence::{write_tuples, TupleFileHeader};
use confscale_core::seed::rng_from;
use confscale_core::Query;
use rand::seq::index;

use crate::common::{build_backends, input_hash, load_query_files, parallel_map, run_seed};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenStats {
    pub queries: usize,
    pub tuples: usize,
    pub partial_pools: usize,
}

/// Applies `--mix`: draw the given fraction of each file (seeded), keeping
/// file order, then `--max-queries`.
fn select_queries(cfg: &RunConfig, files: Vec<Vec<Query>>, seed: u64) -> Result<Vec<Query>, CliError> {
    let mix = &cfg.generation.mix;
    if !mix.is_empty() && mix.len() != files.len() {
        return Err(CliError::Usage(format!(
            "--mix has {} fractions for {} query files",
            mix.len(),
            files.len()
        )));
    }
    let mut out = Vec::new();
    for (i, qs) in files.into_iter().enumerate() {
        match mix.get(i) {
            Some(frac) => {
                let k = ((qs.len() as f64) * frac).round() as usize;
                let mut rng = rng_from(&[b"mix", &seed.to_le_bytes(), &(i as u64).to_le_bytes()]);
                let mut picked = index::sample(&mut rng, qs.len(), k.min(qs.len())).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|j| qs[j].clone()));
            }
            None => out.extend(qs),
        }
    }
    if let Some(cap) = cfg.sampling.max_queries {
        out.truncate(cap);
    }
    Ok(out)
}

pub fn run_gen_data(cfg: &RunConfig) -> Result<GenStats, CliError> {
    cfg.validate()?;
    let out = cfg.out_path()?.to_path_buf();
    let files = load_query_files(&cfg.paths.queries)?;
    let seed = run_seed(cfg)?;
    let queries = select_queries(cfg, files, seed)?;
    let backends = build_backends(cfg, &queries)?;
    let gen = GenerationConfig {
        n_samples: cfg.generation.n_samples,
        edt: cfg.edt,
        confidence_prompt: cfg.sampling.confidence_prompt()?,
        eta: cfg.generation.eta,
        max_tokens: cfg.sampling.max_tokens,
        seed,
    };
    gen.validate()?;

    let batches = parallel_map(cfg.parallel, &queries, |q| build_tuples(q, &*backends.generator, &gen))?;
    let mut stats = GenStats {
        queries: queries.len(),
        ..GenStats::default()
    };
    let mut tuples = Vec::new();
    for (q, batch) in queries.iter().zip(batches) {
        let batch = batch?;
        let mut no_entropy = 0;
        for w in &batch.warnings {
            match w {
                BuildWarning::PartialPool { obtained, requested } => {
                    stats.partial_pools += 1;
                    log::warn!("query {}: only {obtained} of {requested} samples succeeded", q.id);
                }
                BuildWarning::NoEntropy { .. } => no_entropy += 1,
            }
        }
        if no_entropy > 0 {
            log::warn!(
                "query {}: {no_entropy} samples had no first-token distribution; used T0",
                q.id
            );
        }
        tuples.extend(batch.tuples);
    }
    if let Some(cap) = cfg.generation.balance_cap {
        tuples = balance_bins(&tuples, cfg.generation.n_bins, cap, seed);
    }
    stats.tuples = tuples.len();

    let query_paths: Vec<&std::path::Path> = cfg.paths.queries.iter().map(|p| p.as_path()).collect();
    let header = TupleFileHeader {
        run_config: cfg.to_json(),
        input_hash: input_hash(&query_paths)?,
    };
    write_tuples(&out, &header, &tuples)?;
    Ok(stats)
}
