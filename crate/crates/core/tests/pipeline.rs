use std::collections::HashMap;
use std::sync::Mutex;

use confscale_core::backend::{
    Backend, BackendError, Completion, GeneratorRequest, TokenDistribution,
};
use confscale_core::dataset::{build_tuples, BuildWarning, GenerationConfig};
use confscale_core::edt::EdtParams;
use confscale_core::{AnswerType, Query};

/// Deterministic scripted model. The probe's first-token distribution, the
/// completion text and the P(True) value are all functions of the request,
/// and every request is logged.
#[derive(Default)]
struct Scripted {
    log: Mutex<Vec<(bool, f64, u64)>>,
    fail_seed_mod: Option<u64>,
}

fn probe_probs(seed: u64) -> Vec<f64> {
    let a = 0.3 + (seed % 60) as f64 / 100.0;
    vec![a, (1.0 - a) * 0.7, (1.0 - a) * 0.3]
}

fn text_for(seed: u64) -> String {
    match seed % 5 {
        0 => "I am not sure.".into(),
        1 | 2 => "so Answer: 7".into(),
        3 => "so Answer: 12".into(),
        _ => "so Answer: 7.0".into(),
    }
}

fn conf_for(prompt: &str) -> f64 {
    let h = prompt.bytes().fold(17u64, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64));
    0.05 + (h % 90) as f64 / 100.0
}

impl Backend for Scripted {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn sample(&self, r: &GeneratorRequest) -> Result<Completion, BackendError> {
        let seed = r.seed.expect("seeded");
        let probe = r.first_token_logprobs;
        self.log.lock().unwrap().push((probe, r.temperature, seed));
        if !probe && self.fail_seed_mod.is_some_and(|m| seed.is_multiple_of(m)) {
            return Err(BackendError::Transport {
                attempts: 5,
                message: "scripted".into(),
            });
        }
        if probe {
            let entries = probe_probs(seed)
                .into_iter()
                .enumerate()
                .map(|(i, p)| (format!("t{i}"), p.ln()))
                .collect();
            return Ok(Completion {
                text: "t0".into(),
                first_token: Some(TokenDistribution::new(entries, true)?),
            });
        }
        Ok(Completion {
            text: text_for(seed),
            first_token: None,
        })
    }

    fn token_probability(&self, prompt: &str, _variants: &[String]) -> Result<f64, BackendError> {
        Ok(conf_for(prompt))
    }
}

fn oracle_temperature(probs: &[f64], p: &EdtParams) -> f64 {
    let h: f64 = probs.iter().map(|x| -x * x.ln()).sum();
    let t = p.t0 * p.m.powf(p.gamma / h);
    if t < p.tau0 {
        0.0
    } else {
        t
    }
}

fn query() -> Query {
    Query::new("pipe-1", "What is 3+4?", AnswerType::Number, None).unwrap()
}

#[test]
fn tuples_match_independent_oracle() {
    let backend = Scripted::default();
    let cfg = GenerationConfig {
        n_samples: 12,
        seed: 99,
        ..GenerationConfig::default()
    };
    let batch = build_tuples(&query(), &backend, &cfg).unwrap();
    assert!(batch.warnings.is_empty());

    // probe at T0, then sample at the EDT temperature with the same seed
    let log = backend.log.lock().unwrap().clone();
    assert_eq!(log.len(), 24);
    for pair in log.chunks(2) {
        let (probe, t_probe, seed) = pair[0];
        let (full, t_full, seed2) = pair[1];
        assert!(probe && !full);
        assert_eq!(seed, seed2);
        assert_eq!(t_probe, cfg.edt.t0);
        let want = oracle_temperature(&probe_probs(seed), &cfg.edt);
        assert!((t_full - want).abs() < 1e-12, "{t_full} vs {want}");
    }

    // SSC by hand: group texts by numeric answer, invalid texts only add to the total
    let responses = batch.pool.responses();
    assert_eq!(responses.len(), 12);
    let total: f64 = responses.iter().map(|r| r.confidence.unwrap()).sum();
    let mut mass: HashMap<String, f64> = HashMap::new();
    for r in responses {
        let key = if r.text.contains("Answer: 12") {
            "12"
        } else if r.text.contains("Answer: 7") {
            "7"
        } else {
            continue;
        };
        *mass.entry(key.into()).or_default() += r.confidence.unwrap();
    }
    let valid: Vec<_> = responses.iter().filter(|r| r.text.contains("Answer")).collect();
    assert_eq!(batch.tuples.len(), valid.len());
    for (t, r) in batch.tuples.iter().zip(valid) {
        assert_eq!(t.response, r.text);
        let key = if r.text.contains("Answer: 12") { "12" } else { "7" };
        let want = mass[key] / total;
        assert!((t.target_confidence - want).abs() < 1e-12);
        assert_eq!(t.use_for_generation, want > cfg.eta);
    }
}

#[test]
fn transport_failures_shrink_the_pool() {
    let backend = Scripted {
        fail_seed_mod: Some(2),
        ..Scripted::default()
    };
    let cfg = GenerationConfig {
        n_samples: 16,
        seed: 5,
        ..GenerationConfig::default()
    };
    let batch = build_tuples(&query(), &backend, &cfg).unwrap();
    let obtained = batch.pool.len();
    assert!(obtained > 0 && obtained < 16);
    assert!(batch.warnings.contains(&BuildWarning::PartialPool {
        obtained,
        requested: 16
    }));
    for (i, r) in batch.pool.responses().iter().enumerate() {
        assert_eq!(r.index, i);
    }
}

#[test]
fn reruns_are_identical() {
    let cfg = GenerationConfig {
        n_samples: 8,
        seed: 42,
        ..GenerationConfig::default()
    };
    let a = build_tuples(&query(), &Scripted::default(), &cfg).unwrap();
    let b = build_tuples(&query(), &Scripted::default(), &cfg).unwrap();
    assert_eq!(a.tuples, b.tuples);
}
