//! P(True) confidence and soft self-consistency (SSC).

use crate::answer::{answers_equal, CanonicalAnswer, Query, SampledResponse};
use crate::backend::{default_yes_variants, Backend, BackendError};
use crate::prompts::ConfidencePrompt;

/// `x ⊕ y ⊕ I`: the query prompt, the response text, a newline, then the
/// instruction. Byte-stable for identical inputs.
pub fn build_confidence_prompt(
    query: &Query,
    response: &SampledResponse,
    instruction: &ConfidencePrompt,
) -> String {
    confidence_prompt_text(&query.prompt, &response.text, instruction)
}

pub fn confidence_prompt_text(
    query_prompt: &str,
    response_text: &str,
    instruction: &ConfidencePrompt,
) -> String {
    let mut s = String::with_capacity(
        query_prompt.len() + response_text.len() + instruction.text().len() + 1,
    );
    s.push_str(query_prompt);
    s.push_str(response_text);
    s.push('\n');
    s.push_str(instruction.text());
    s
}

/// Probability of "Yes" after the confidence prompt, summed over the default
/// token spellings. Backend errors propagate; there is no fallback.
pub fn p_true<B: Backend + ?Sized>(
    query: &Query,
    response: &SampledResponse,
    instruction: &ConfidencePrompt,
    backend: &B,
) -> Result<f64, BackendError> {
    if response.text.is_empty() {
        return Err(BackendError::InvalidRequest(
            "cannot score an empty response".into(),
        ));
    }
    let prompt = build_confidence_prompt(query, response, instruction);
    backend.token_probability(&prompt, &default_yes_variants())
}

/// Per-answer share of total confidence mass.
///
/// Entries keep first-occurrence order. Responses without an extracted
/// answer add to the denominator but never get an entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SscTable {
    entries: Vec<(CanonicalAnswer, f64)>,
    invalid_mass: f64,
}

impl SscTable {
    pub fn entries(&self) -> &[(CanonicalAnswer, f64)] {
        &self.entries
    }

    /// Normalized mass of the responses whose answer could not be extracted.
    pub fn invalid_mass(&self) -> f64 {
        self.invalid_mass
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, answer: &CanonicalAnswer) -> Option<f64> {
        self.entries
            .iter()
            .find(|(a, _)| answers_equal(a, answer))
            .map(|(_, s)| *s)
    }
}

/// SSC(y) = sum of confidences of responses answering y / sum of all
/// confidences. Empty table when the total is zero.
pub fn ssc_scores(responses: &[(Option<CanonicalAnswer>, f64)]) -> SscTable {
    let total: f64 = responses.iter().map(|(_, c)| *c).sum();
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(total > 0.0) {
        return SscTable::default();
    }
    let mut groups: Vec<(CanonicalAnswer, f64)> = Vec::new();
    let mut invalid = 0.0;
    for (answer, c) in responses {
        match answer {
            Some(a) => match groups.iter_mut().find(|(g, _)| answers_equal(g, a)) {
                Some((_, mass)) => *mass += c,
                None => groups.push((*a, *c)),
            },
            None => invalid += c,
        }
    }
    SscTable {
        entries: groups.into_iter().map(|(a, m)| (a, m / total)).collect(),
        invalid_mass: invalid / total,
    }
}
