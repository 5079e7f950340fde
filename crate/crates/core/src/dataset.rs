//! Training-tuple synthesis for confidence self-calibration.
//!
//! For each seed query: draw N responses with entropy-based dynamic
//! temperature, score each with P(True), group by answer, and label every
//! response with its group's SSC share.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{extract_answer, Query, ResponsePool, SampledResponse};
use crate::backend::{first_token_entropy, Backend, BackendError, GeneratorRequest};
use crate::confidence::{p_true, ssc_scores};
use crate::edt::{temperature_for_entropy, EdtError, EdtParams};
use crate::metrics::bin_index;
use crate::numfmt;
use crate::prompts::{render_system_prompt, ConfidencePrompt};
use crate::seed::{rng_from, sample_seed};

pub const DEFAULT_ETA: f64 = 0.75;
pub const DEFAULT_OMEGA: f64 = 0.1;
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Edt(#[from] EdtError),
    #[error("invalid generation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub query_id: String,
    pub query: String,
    pub response: String,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub target_confidence: f64,
    pub use_for_generation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub n_samples: usize,
    pub edt: EdtParams,
    pub confidence_prompt: ConfidencePrompt,
    pub eta: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_samples: DEFAULT_SAMPLES,
            edt: EdtParams::default(),
            confidence_prompt: ConfidencePrompt::default(),
            eta: DEFAULT_ETA,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_samples < 2 {
            return Err(DatasetError::Config("n_samples must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(DatasetError::Config(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        self.edt.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildWarning {
    /// Fewer than N samples survived transport failures.
    PartialPool { obtained: usize, requested: usize },
    /// No first-token distribution came back; sampled at `T0` instead.
    NoEntropy { index: usize },
}

/// Tuples for one query plus the scored responses they came from.
#[derive(Debug, Clone)]
pub struct TupleBatch {
    pub tuples: Vec<TrainingTuple>,
    pub pool: ResponsePool,
    pub warnings: Vec<BuildWarning>,
}

/// One EDT-tempered sample: probe the first-token distribution at `T0`,
/// map its entropy to a temperature, then sample the full response.
pub fn sample_with_edt<B: Backend + ?Sized>(
    query: &Query,
    index: usize,
    backend: &B,
    cfg: &GenerationConfig,
) -> Result<(String, f64, bool), BackendError> {
    let seed = sample_seed(cfg.seed, &query.id, index);
    let system = render_system_prompt(query.answer_type);
    let mut probe = GeneratorRequest::new(query.prompt.clone(), cfg.edt.t0);
    probe.system = Some(system.clone());
    probe.max_tokens = 1;
    probe.seed = Some(seed);
    probe.first_token_logprobs = true;
    let dist = backend.sample(&probe)?.first_token;
    let (temperature, has_entropy) = match dist {
        Some(d) => (temperature_for_entropy(first_token_entropy(&d), &cfg.edt), true),
        None => (cfg.edt.t0, false),
    };
    let mut request = GeneratorRequest::new(query.prompt.clone(), temperature);
    request.system = Some(system);
    request.max_tokens = cfg.max_tokens;
    request.seed = Some(seed);
    let completion = backend.sample(&request)?;
    Ok((completion.text, temperature, has_entropy))
}

/// Samples N responses for `query` and labels each with its answer group's
/// SSC. Responses whose answer cannot be extracted produce no tuple but
/// still count toward the SSC denominator.
pub fn build_tuples<B: Backend + ?Sized>(
    query: &Query,
    backend: &B,
    cfg: &GenerationConfig,
) -> Result<TupleBatch, DatasetError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let mut responses = Vec::with_capacity(cfg.n_samples);
    let mut last_transport = None;
    for i in 0..cfg.n_samples {
        let scored = sample_with_edt(query, i, backend, cfg).and_then(|(text, temperature, ok)| {
            let mut r = SampledResponse {
                query_id: query.id.clone(),
                index: responses.len(),
                answer: extract_answer(&text, query.answer_type),
                text,
                temperature,
                confidence: None,
            };
            r.confidence = Some(p_true(query, &r, &cfg.confidence_prompt, backend)?);
            Ok((r, ok))
        });
        match scored {
            Ok((r, has_entropy)) => {
                if !has_entropy {
                    warnings.push(BuildWarning::NoEntropy { index: i });
                }
                responses.push(r);
            }
            Err(e @ BackendError::Transport { .. }) => {
                log::warn!("query {}: sample {i} dropped: {e}", query.id);
                last_transport = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if responses.is_empty() {
        if let Some(e) = last_transport {
            return Err(e.into());
        }
    }
    if responses.len() < cfg.n_samples {
        warnings.push(BuildWarning::PartialPool {
            obtained: responses.len(),
            requested: cfg.n_samples,
        });
    }
    let scored: Vec<_> = responses
        .iter()
        .map(|r| (r.answer, r.confidence.unwrap_or(0.0)))
        .collect();
    let table = ssc_scores(&scored);
    let tuples = responses
        .iter()
        .filter_map(|r| {
            let target = table.get(r.answer.as_ref()?)?;
            Some(TrainingTuple {
                query_id: query.id.clone(),
                query: query.prompt.clone(),
                response: r.text.clone(),
                target_confidence: target,
                use_for_generation: target > cfg.eta,
            })
        })
        .collect();
    let pool = ResponsePool::new(query.id.clone(), responses)
        .map_err(|e| DatasetError::Config(e.to_string()))?;
    Ok(TupleBatch {
        tuples,
        pool,
        warnings,
    })
}

/// Caps every equal-width confidence bin at `per_bin_cap` tuples, sampling
/// uniformly without replacement. Output is bin-major; bins under the cap
/// keep their input order, capped bins keep the sampled order.
pub fn balance_bins(
    tuples: &[TrainingTuple],
    n_bins: usize,
    per_bin_cap: usize,
    seed: u64,
) -> Vec<TrainingTuple> {
    let n_bins = n_bins.max(1);
    let mut bins: Vec<Vec<&TrainingTuple>> = vec![Vec::new(); n_bins];
    for t in tuples {
        bins[bin_index(t.target_confidence.clamp(0.0, 1.0), n_bins) - 1].push(t);
    }
    let mut out = Vec::new();
    for (b, members) in bins.iter().enumerate() {
        if members.len() <= per_bin_cap {
            out.extend(members.iter().map(|t| (*t).clone()));
            continue;
        }
        let mut rng = rng_from(&[b"balance", &seed.to_le_bytes(), &(b as u64).to_le_bytes()]);
        for i in index::sample(&mut rng, members.len(), per_bin_cap) {
            out.push(members[i].clone());
        }
    }
    out
}

/// SmoothL1 with transition point 1.
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Reference value of the self-calibration objective for one example:
/// SmoothL1(pred - target) plus `omega * nll` when the example passes eta.
/// Since both confidences lie in [0, 1] the SmoothL1 term is effectively
/// quadratic.
pub fn combined_loss(pred: f64, target: f64, sequence_nll: f64, omega: f64, passes_eta: bool) -> f64 {
    let generation = if passes_eta { omega * sequence_nll } else { 0.0 };
    smooth_l1(pred - target) + generation
}

/// d combined_loss / d pred.
pub fn combined_loss_grad(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(c: f64) -> TrainingTuple {
        TrainingTuple {
            query_id: "q".into(),
            query: "Q".into(),
            response: format!("{c}"),
            target_confidence: c,
            use_for_generation: c > DEFAULT_ETA,
        }
    }

    #[test]
    fn loss_values() {
        assert_eq!(combined_loss(0.4, 0.4, 3.0, 0.1, false), 0.0);
        assert!((combined_loss(0.9, 0.4, 0.0, 0.1, false) - 0.125).abs() < 1e-12);
        assert!((combined_loss(0.9, 0.4, 2.0, 0.1, true) - 0.325).abs() < 1e-12);
        assert!((smooth_l1(1.5) - 1.0).abs() < 1e-12);
        assert!((smooth_l1(-2.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn loss_is_continuous_at_transition() {
        let eps = 1e-9;
        assert!((smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)).abs() < 1e-8);
        assert!((combined_loss_grad(1.0 - eps, 0.0) - combined_loss_grad(1.0 + eps, 0.0)).abs() < 1e-8);
    }

    #[test]
    fn balance_caps_each_bin() {
        let mut tuples: Vec<_> = (0..1000).map(|i| tuple(0.95 + i as f64 * 1e-5)).collect();
        for b in 0..9 {
            tuples.extend((0..10).map(|i| tuple(b as f64 / 10.0 + 0.01 + i as f64 * 1e-3)));
        }
        let out = balance_bins(&tuples, 10, 10, 7);
        assert_eq!(out.len(), 100);
        let mut counts = [0usize; 10];
        for t in &out {
            counts[bin_index(t.target_confidence, 10) - 1] += 1;
        }
        assert_eq!(counts, [10; 10]);
        assert_eq!(out, balance_bins(&tuples, 10, 10, 7));
        assert_ne!(out, balance_bins(&tuples, 10, 10, 8));
    }

    #[test]
    fn balance_under_cap_is_identity_multiset() {
        let tuples: Vec<_> = (0..10).map(|i| tuple(i as f64 / 10.0 + 0.05)).collect();
        let out = balance_bins(&tuples, 10, 5, 1);
        assert_eq!(out, tuples);
    }
}
