//! Drawing and scoring responses from a backend.

use crate::answer::{extract_answer, Query, ResponsePool, SampledResponse};
use crate::backend::{Backend, BackendError, GeneratorRequest};
use crate::confidence::p_true;
use crate::prompts::{render_system_prompt, ConfidencePrompt};
use crate::seed::sample_seed;
use crate::strategies::{Observation, ResponseSource, StrategyError};

/// Fixed settings for pool sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub confidence_prompt: ConfidencePrompt,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            max_tokens: 1024,
            seed: 0,
            confidence_prompt: ConfidencePrompt::default(),
        }
    }
}

/// Samples response `index` of `query` and extracts its answer. The request
/// seed depends only on `(cfg.seed, query.id, index)`.
pub fn sample_response<B: Backend + ?Sized>(
    query: &Query,
    index: usize,
    backend: &B,
    cfg: &SamplingConfig,
) -> Result<SampledResponse, BackendError> {
    let mut request = GeneratorRequest::new(query.prompt.clone(), cfg.temperature);
    request.system = Some(render_system_prompt(query.answer_type));
    request.max_tokens = cfg.max_tokens;
    request.seed = Some(sample_seed(cfg.seed, &query.id, index));
    let completion = backend.sample(&request)?;
    Ok(SampledResponse {
        query_id: query.id.clone(),
        index,
        answer: extract_answer(&completion.text, query.answer_type),
        text: completion.text,
        temperature: cfg.temperature,
        confidence: None,
    })
}

/// [`sample_response`] followed by P(True) scoring with `scorer`.
pub fn sample_scored<B: Backend + ?Sized, C: Backend + ?Sized>(
    query: &Query,
    index: usize,
    backend: &B,
    scorer: &C,
    cfg: &SamplingConfig,
) -> Result<SampledResponse, BackendError> {
    let mut r = sample_response(query, index, backend, cfg)?;
    r.confidence = Some(p_true(query, &r, &cfg.confidence_prompt, scorer)?);
    Ok(r)
}

/// A fully scored pool of `n` responses.
pub fn sample_pool<B: Backend + ?Sized>(
    query: &Query,
    n: usize,
    backend: &B,
    cfg: &SamplingConfig,
) -> Result<ResponsePool, BackendError> {
    let responses = (0..n)
        .map(|i| sample_scored(query, i, backend, backend, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ResponsePool::new(query.id.clone(), responses).expect("indices are contiguous"))
}

/// Samples lazily, one backend call (plus scoring) per observed index, and
/// remembers what it drew so several strategies can share one sequence.
pub struct LiveSource<'a, B: Backend + ?Sized> {
    query: &'a Query,
    backend: &'a B,
    cfg: &'a SamplingConfig,
    drawn: Vec<SampledResponse>,
}

impl<'a, B: Backend + ?Sized> LiveSource<'a, B> {
    pub fn new(query: &'a Query, backend: &'a B, cfg: &'a SamplingConfig) -> Self {
        LiveSource {
            query,
            backend,
            cfg,
            drawn: Vec::new(),
        }
    }

    pub fn drawn(&self) -> &[SampledResponse] {
        &self.drawn
    }
}

impl<B: Backend + ?Sized> ResponseSource for LiveSource<'_, B> {
    fn depth(&self) -> Option<usize> {
        None
    }

    fn observe(&mut self, index: usize) -> Result<Observation, StrategyError> {
        while self.drawn.len() <= index {
            let i = self.drawn.len();
            let r = sample_scored(self.query, i, self.backend, self.backend, self.cfg)?;
            self.drawn.push(r);
        }
        let r = &self.drawn[index];
        Ok(Observation {
            answer: r.answer,
            confidence: r.confidence,
        })
    }
}
