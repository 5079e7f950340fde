//! A seeded stand-in for a language model.
//!
//! Each query has a known answer distribution: the gold answer with
//! probability `p_true` and a spread of decoys sharing the rest. Completions
//! are drawn from that distribution (sharpened or flattened by temperature)
//! and rendered in the `Explanation:/Answer:` format. Confidence queries are
//! answered by a [`ConfidenceLaw`].
//!
//! [`SyntheticModelSpec::for_queries`] draws each query's distribution from a
//! Dirichlet prior and places the gold answer in a slot drawn from that same
//! distribution, so the `Calibrated` law (confidence = probability the model
//! assigns to the answer) is calibrated in expectation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use super::{Backend, BackendError, Completion, GeneratorRequest, TokenDistribution};
use crate::answer::{answers_equal, extract_answer, AnswerType, CanonicalAnswer, Query};
use crate::seed::rng_from;

/// How the synthetic model answers "is this answer correct?".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceLaw {
    /// Probability the model assigns to the response's answer.
    Calibrated,
    /// `min(1, posterior + bias)`.
    Overconfident { bias: f64 },
    /// Always the same value.
    Fixed(f64),
    /// Beta-distributed, with separate shapes for correct and incorrect answers.
    Beta {
        correct: (f64, f64),
        incorrect: (f64, f64),
    },
}

impl ConfidenceLaw {
    /// Parses `calibrated`, `overconfident:<bias>`, `fixed:<v>` or
    /// `beta:<a>,<b>,<a>,<b>` (correct shapes first).
    pub fn parse(s: &str) -> Result<Self, BackendError> {
        let bad = || BackendError::Config(format!("unrecognized confidence law {s:?}"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let nums = |a: &str| -> Result<Vec<f64>, BackendError> {
            a.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        let law = match (name, arg) {
            ("calibrated", None) => ConfidenceLaw::Calibrated,
            ("overconfident", Some(a)) => ConfidenceLaw::Overconfident {
                bias: a.parse().map_err(|_| bad())?,
            },
            ("fixed", Some(a)) => ConfidenceLaw::Fixed(a.parse().map_err(|_| bad())?),
            ("beta", Some(a)) => match nums(a)?.as_slice() {
                [a1, b1, a2, b2] => ConfidenceLaw::Beta {
                    correct: (*a1, *b1),
                    incorrect: (*a2, *b2),
                },
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let ok = match *self {
            ConfidenceLaw::Calibrated => true,
            ConfidenceLaw::Overconfident { bias } => bias.is_finite() && bias >= 0.0,
            ConfidenceLaw::Fixed(v) => (0.0..=1.0).contains(&v),
            ConfidenceLaw::Beta { correct, incorrect } => [correct.0, correct.1, incorrect.0, incorrect.1]
                .iter()
                .all(|x| x.is_finite() && *x > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(BackendError::Config(format!("invalid confidence law {self:?}")))
        }
    }

    pub fn label(&self) -> String {
        match self {
            ConfidenceLaw::Calibrated => "calibrated".into(),
            ConfidenceLaw::Overconfident { bias } => format!("overconfident:{bias}"),
            ConfidenceLaw::Fixed(v) => format!("fixed:{v}"),
            ConfidenceLaw::Beta { correct, incorrect } => format!(
                "beta:{},{},{},{}",
                correct.0, correct.1, incorrect.0, incorrect.1
            ),
        }
    }
}

/// Answer distribution of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub prompt: String,
    pub answer_type: AnswerType,
    pub gold: CanonicalAnswer,
    pub p_true: f64,
    /// Decoy answers with weights summing to 1; they share `1 - p_true`.
    pub decoys: Vec<(CanonicalAnswer, f64)>,
}

impl SyntheticQuery {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.p_true) {
            return Err(BackendError::Config(format!("p_true {} outside [0,1]", self.p_true)));
        }
        if self.decoys.is_empty() {
            if self.p_true < 1.0 {
                return Err(BackendError::Config("p_true < 1 requires decoys".into()));
            }
            return Ok(());
        }
        let total: f64 = self.decoys.iter().map(|(_, w)| *w).sum();
        if self.decoys.iter().any(|(_, w)| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(BackendError::Config("decoy weights must be >= 0 and sum to 1".into()));
        }
        if self.decoys.iter().any(|(a, _)| answers_equal(a, &self.gold)) {
            return Err(BackendError::Config("a decoy equals the gold answer".into()));
        }
        Ok(())
    }

    /// `(answer, probability)` for every candidate, gold first.
    pub fn distribution(&self) -> Vec<(CanonicalAnswer, f64)> {
        let mut out = Vec::with_capacity(self.decoys.len() + 1);
        out.push((self.gold, self.p_true));
        out.extend(
            self.decoys
                .iter()
                .map(|(a, w)| (*a, (1.0 - self.p_true) * w)),
        );
        out
    }

    /// Probability the model assigns to `answer` (0 for unknown answers).
    pub fn posterior(&self, answer: &CanonicalAnswer) -> f64 {
        self.distribution()
            .into_iter()
            .filter(|(a, _)| answers_equal(a, answer))
            .map(|(_, p)| p)
            .sum()
    }
}

/// Knobs for drawing per-query distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSettings {
    /// Gold plus decoys. Option-letter queries cap this at 5.
    pub n_candidates: usize,
    /// Symmetric Dirichlet concentration; smaller means peakier distributions.
    pub concentration: f64,
    /// Probability a completion has no parseable answer.
    pub invalid_rate: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        SyntheticSettings {
            n_candidates: 4,
            concentration: 0.6,
            invalid_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModelSpec {
    pub queries: Vec<SyntheticQuery>,
    pub law: ConfidenceLaw,
    pub seed: u64,
    pub invalid_rate: f64,
}

impl SyntheticModelSpec {
    /// Draws an answer distribution for every query. Each query must carry a
    /// gold answer; it is placed in a slot drawn from the distribution itself.
    pub fn for_queries(
        queries: &[Query],
        settings: SyntheticSettings,
        law: ConfidenceLaw,
        seed: u64,
    ) -> Result<Self, BackendError> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if settings.n_candidates < 1 || !(settings.concentration > 0.0) {
            return Err(BackendError::Config(
                "n_candidates must be >= 1 and concentration > 0".into(),
            ));
        }
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            let gold = q.gold.ok_or_else(|| {
                BackendError::Config(format!("synthetic backend needs a gold answer for {:?}", q.id))
            })?;
            let mut rng = rng_from(&[b"synthetic-query", &seed.to_le_bytes(), q.id.as_bytes()]);
            let k = match q.answer_type {
                AnswerType::OptionLetter => settings.n_candidates.min(5),
                AnswerType::Number => settings.n_candidates,
            };
            let probs = dirichlet(&mut rng, k, settings.concentration);
            let gold_slot = draw_index(&mut rng, &probs);
            let decoy_answers = decoys_for(&mut rng, &gold, k - 1);
            let p_true = probs[gold_slot];
            let rest = 1.0 - p_true;
            let decoy_probs: Vec<f64> = probs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != gold_slot)
                .map(|(_, p)| *p)
                .collect();
            let decoys = if rest > 0.0 {
                let mut d: Vec<(CanonicalAnswer, f64)> = decoy_answers
                    .into_iter()
                    .zip(decoy_probs.iter().map(|p| p / rest))
                    .collect();
                // renormalize against rounding
                let total: f64 = d.iter().map(|(_, w)| *w).sum();
                d.iter_mut().for_each(|(_, w)| *w /= total);
                d
            } else {
                Vec::new()
            };
            out.push(SyntheticQuery {
                prompt: q.prompt.clone(),
                answer_type: q.answer_type,
                gold,
                p_true: if decoys.is_empty() { 1.0 } else { p_true },
                decoys,
            });
        }
        let spec = SyntheticModelSpec {
            queries: out,
            law,
            seed,
            invalid_rate: settings.invalid_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Generates `n` option-letter queries with random gold letters together
    /// with a model over them.
    pub fn corpus(
        n: usize,
        settings: SyntheticSettings,
        law: ConfidenceLaw,
        seed: u64,
    ) -> Result<(Vec<Query>, Self), BackendError> {
        let mut rng = rng_from(&[b"synthetic-corpus", &seed.to_le_bytes()]);
        let queries: Vec<Query> = (0..n)
            .map(|i| {
                let gold = CanonicalAnswer::OptionLetter((b'A' + rng.random_range(0..5u8)) as char);
                Query {
                    id: format!("syn-{i:05}"),
                    prompt: format!(
                        "Question: synthetic item {i}\nOptions:\nA. a\nB. b\nC. c\nD. d\nE. e\n"
                    ),
                    answer_type: AnswerType::OptionLetter,
                    gold: Some(gold),
                }
            })
            .collect();
        let spec = Self::for_queries(&queries, settings, law, seed)?;
        Ok((queries, spec))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.law.validate()?;
        if !(0.0..=1.0).contains(&self.invalid_rate) {
            return Err(BackendError::Config("invalid_rate outside [0,1]".into()));
        }
        self.queries.iter().try_for_each(SyntheticQuery::validate)
    }
}

fn dirichlet(rng: &mut impl Rng, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

fn draw_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn decoys_for(rng: &mut impl Rng, gold: &CanonicalAnswer, n: usize) -> Vec<CanonicalAnswer> {
    match gold {
        CanonicalAnswer::OptionLetter(g) => {
            let mut letters: Vec<char> = ('A'..='E').filter(|c| c != g).collect();
            letters.shuffle(rng);
            letters
                .into_iter()
                .take(n)
                .map(CanonicalAnswer::OptionLetter)
                .collect()
        }
        CanonicalAnswer::Number(v) => {
            let span = (n as i64).max(10) * 2;
            let mut offsets: Vec<i64> = (-span..=span).filter(|o| *o != 0).collect();
            offsets.shuffle(rng);
            offsets
                .into_iter()
                .take(n)
                .map(|o| CanonicalAnswer::Number(v + o as f64))
                .collect()
        }
    }
}

/// Temperature-adjusted distribution: `p^(1/T)` renormalized; `T = 0` is argmax.
fn tempered(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
        return (0..probs.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }
    let logs: Vec<f64> = probs
        .iter()
        .map(|p| if *p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Deterministic simulated model. Every output is a pure function of the
/// spec seed, the request seed and the prompt.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticModelSpec,
    by_prompt: HashMap<String, usize>,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticModelSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let mut by_prompt = HashMap::with_capacity(spec.queries.len());
        for (i, q) in spec.queries.iter().enumerate() {
            by_prompt.entry(q.prompt.clone()).or_insert(i);
        }
        Ok(SyntheticBackend { spec, by_prompt })
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    pub fn query(&self, prompt: &str) -> Option<&SyntheticQuery> {
        self.by_prompt.get(prompt).map(|&i| &self.spec.queries[i])
    }

    /// Splits a confidence prompt into the query it starts with and the rest.
    fn split_confidence_prompt<'a>(&self, prompt: &'a str) -> Option<(&SyntheticQuery, &'a str)> {
        prompt
            .match_indices("Explanation:")
            .map(|(i, _)| i)
            .chain(std::iter::once(prompt.len()))
            .find_map(|i| self.query(&prompt[..i]).map(|q| (q, &prompt[i..])))
    }
}

impl Backend for SyntheticBackend {
    fn name(&self) -> String {
        format!("synthetic[{}]", self.spec.law.label())
    }

    fn sample(&self, request: &GeneratorRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let query = self.query(&request.prompt).ok_or_else(|| {
            BackendError::Refusal {
                status: 404,
                message: "prompt is not part of the synthetic model".into(),
            }
        })?;
        let mut rng = rng_from(&[
            b"synthetic-sample",
            &self.spec.seed.to_le_bytes(),
            &request.seed.unwrap_or(0).to_le_bytes(),
            request.prompt.as_bytes(),
        ]);
        let dist = query.distribution();
        let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
        let trace: u32 = rng.random();
        let invalid = self.spec.invalid_rate > 0.0 && rng.random::<f64>() < self.spec.invalid_rate;
        let text = if invalid {
            format!("Explanation: synthetic trace {trace:08x}.\nI cannot decide.")
        } else {
            let pick = draw_index(&mut rng, &tempered(&probs, request.temperature));
            format!(
                "Explanation: synthetic trace {trace:08x}.\nAnswer: {}",
                dist[pick].0.render()
            )
        };
        let first_token = if request.first_token_logprobs {
            let entries: Vec<(String, f64)> = dist
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(a, p)| (a.render(), p.ln()))
                .collect();
            Some(TokenDistribution::new(entries, false)?)
        } else {
            None
        };
        Ok(Completion { text, first_token })
    }

    fn token_probability(&self, prompt: &str, variants: &[String]) -> Result<f64, BackendError> {
        if variants.is_empty() {
            return Err(BackendError::InvalidRequest("no token variants given".into()));
        }
        let (query, rest) = self.split_confidence_prompt(prompt).ok_or_else(|| {
            BackendError::Refusal {
                status: 404,
                message: "confidence prompt does not start with a known query".into(),
            }
        })?;
        let answer = extract_answer(rest, query.answer_type);
        let posterior = answer.map(|a| query.posterior(&a)).unwrap_or(0.0);
        let value = match self.spec.law {
            ConfidenceLaw::Calibrated => posterior,
            ConfidenceLaw::Overconfident { bias } => (posterior + bias).min(1.0),
            ConfidenceLaw::Fixed(v) => v,
            ConfidenceLaw::Beta { correct, incorrect } => {
                let is_correct = answer.is_some_and(|a| answers_equal(&a, &query.gold));
                let (a, b) = if is_correct { correct } else { incorrect };
                let mut rng = rng_from(&[
                    b"synthetic-confidence",
                    &self.spec.seed.to_le_bytes(),
                    prompt.as_bytes(),
                ]);
                Beta::new(a, b)
                    .map_err(|e| BackendError::Config(e.to_string()))?
                    .sample(&mut rng)
            }
        };
        Ok(value.clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letter(c: char) -> CanonicalAnswer {
        CanonicalAnswer::OptionLetter(c)
    }

    fn single(p_true: f64, law: ConfidenceLaw) -> SyntheticBackend {
        let q = SyntheticQuery {
            prompt: "Question: q\n".into(),
            answer_type: AnswerType::OptionLetter,
            gold: letter('B'),
            p_true,
            decoys: vec![(letter('A'), 0.5), (letter('C'), 0.5)],
        };
        SyntheticBackend::new(SyntheticModelSpec {
            queries: vec![q],
            law,
            seed: 11,
            invalid_rate: 0.0,
        })
        .unwrap()
    }

    fn req(seed: u64) -> GeneratorRequest {
        GeneratorRequest {
            seed: Some(seed),
            ..GeneratorRequest::new("Question: q\n", 1.0)
        }
    }

    #[test]
    fn degenerate_distribution_answers_gold() {
        let b = single(1.0, ConfidenceLaw::Calibrated);
        for s in 0..20 {
            let c = b.sample(&req(s)).unwrap();
            assert_eq!(extract_answer(&c.text, AnswerType::OptionLetter), Some(letter('B')));
        }
    }

    #[test]
    fn same_seed_same_text() {
        let b = single(0.4, ConfidenceLaw::Calibrated);
        assert_eq!(b.sample(&req(3)).unwrap(), b.sample(&req(3)).unwrap());
        let texts: std::collections::HashSet<String> =
            (0..10).map(|s| b.sample(&req(s)).unwrap().text).collect();
        assert!(texts.len() > 1);
    }

    #[test]
    fn empirical_frequencies_match_spec() {
        let b = single(0.5, ConfidenceLaw::Calibrated);
        let n = 10_000;
        let mut counts: HashMap<char, usize> = HashMap::new();
        for s in 0..n {
            let c = b.sample(&req(s)).unwrap();
            if let Some(CanonicalAnswer::OptionLetter(l)) =
                extract_answer(&c.text, AnswerType::OptionLetter)
            {
                *counts.entry(l).or_default() += 1;
            }
        }
        for (l, want) in [('B', 0.5), ('A', 0.25), ('C', 0.25)] {
            let got = counts[&l] as f64 / n as f64;
            assert!((got - want).abs() <= 0.02, "{l}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_temperature_is_greedy() {
        let b = single(0.4, ConfidenceLaw::Calibrated);
        for s in 0..10 {
            let c = b
                .sample(&GeneratorRequest { temperature: 0.0, ..req(s) })
                .unwrap();
            assert!(c.text.ends_with("Answer: B"));
        }
    }

    #[test]
    fn fixed_law_passes_through() {
        let b = single(0.4, ConfidenceLaw::Fixed(0.73));
        let p = b
            .token_probability("Question: q\nExplanation: x\nAnswer: A\nIs it?", &["Yes".into()])
            .unwrap();
        assert_eq!(p, 0.73);
    }

    #[test]
    fn calibrated_law_reports_posterior() {
        let b = single(0.4, ConfidenceLaw::Calibrated);
        let yes = vec!["Yes".to_string()];
        let p_gold = b
            .token_probability("Question: q\nExplanation: x\nAnswer: B\nIs it?", &yes)
            .unwrap();
        let p_decoy = b
            .token_probability("Question: q\nExplanation: x\nAnswer: C\nIs it?", &yes)
            .unwrap();
        let p_none = b
            .token_probability("Question: q\nExplanation: x\nno idea\nIs it?", &yes)
            .unwrap();
        assert!((p_gold - 0.4).abs() < 1e-12);
        assert!((p_decoy - 0.3).abs() < 1e-12);
        assert_eq!(p_none, 0.0);
        let over = single(0.4, ConfidenceLaw::Overconfident { bias: 0.7 });
        assert_eq!(
            over.token_probability("Question: q\nExplanation: x\nAnswer: B\n?", &yes)
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn unknown_prompt_is_refused() {
        let b = single(0.4, ConfidenceLaw::Calibrated);
        assert!(b.sample(&GeneratorRequest::new("other", 1.0)).is_err());
        assert!(b.token_probability("other", &["Yes".into()]).is_err());
    }

    #[test]
    fn first_token_distribution_reflects_model() {
        let b = single(0.5, ConfidenceLaw::Calibrated);
        let c = b
            .sample(&GeneratorRequest { first_token_logprobs: true, ..req(1) })
            .unwrap();
        let d = c.first_token.unwrap();
        assert_eq!(d.entries().len(), 3);
        let h = super::super::first_token_entropy(&d);
        let want = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((h - want).abs() < 1e-12);
    }

    #[test]
    fn generated_specs_are_valid_and_calibrated_in_aggregate() {
        let (queries, spec) =
            SyntheticModelSpec::corpus(4000, SyntheticSettings::default(), ConfidenceLaw::Calibrated, 5)
                .unwrap();
        assert_eq!(queries.len(), spec.queries.len());
        for (q, s) in queries.iter().zip(&spec.queries) {
            assert_eq!(q.gold, Some(s.gold));
            let total: f64 = s.distribution().iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        // Expected accuracy of the modal answer equals the mean of max
        // probability when gold is drawn from the distribution itself.
        let mean_p_gold: f64 = spec.queries.iter().map(|q| q.p_true).sum::<f64>() / 4000.0;
        let mean_sq: f64 = spec
            .queries
            .iter()
            .map(|q| q.distribution().iter().map(|(_, p)| p * p).sum::<f64>())
            .sum::<f64>()
            / 4000.0;
        assert!((mean_p_gold - mean_sq).abs() < 0.02, "{mean_p_gold} vs {mean_sq}");
    }

    #[test]
    fn law_parsing() {
        assert_eq!(ConfidenceLaw::parse("calibrated").unwrap(), ConfidenceLaw::Calibrated);
        assert_eq!(
            ConfidenceLaw::parse("overconfident:0.2").unwrap(),
            ConfidenceLaw::Overconfident { bias: 0.2 }
        );
        assert_eq!(
            ConfidenceLaw::parse("beta:5,2,2,5").unwrap(),
            ConfidenceLaw::Beta { correct: (5.0, 2.0), incorrect: (2.0, 5.0) }
        );
        assert!(ConfidenceLaw::parse("fixed:1.5").is_err());
        assert!(ConfidenceLaw::parse("beta:1,2").is_err());
        assert!(ConfidenceLaw::parse("magic").is_err());
        let law = ConfidenceLaw::parse("beta:5,2,2,5").unwrap();
        assert_eq!(ConfidenceLaw::parse(&law.label()).unwrap(), law);
    }
}
