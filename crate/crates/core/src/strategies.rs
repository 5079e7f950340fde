//! Answer-selection strategies.
//!
//! Every strategy reads responses strictly in sampling order through a
//! [`ResponseSource`]. In replay mode the source is a cached
//! [`ResponsePool`]; in live mode it samples lazily. The outcome depends only
//! on the consumed prefix.
//!
//! Ties are always broken toward the answer whose first occurrence comes
//! earliest (or, for Best-of-N, the lowest index).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{answers_equal, CanonicalAnswer, ResponsePool};
use crate::backend::BackendError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("response pool is empty")]
    EmptyPool,
    #[error("no extractable answer among the first {0} responses")]
    AllInvalid(usize),
    #[error("response {index} has no confidence score")]
    MissingConfidence { index: usize },
    #[error("pool holds {available} responses but {needed} are required")]
    InsufficientDepth { needed: usize, available: usize },
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Pass1,
    BestOfN,
    Sc,
    ScConf,
    Asc,
    AscConf,
    EarlyStop,
    Esc,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Pass1,
        StrategyKind::Sc,
        StrategyKind::ScConf,
        StrategyKind::BestOfN,
        StrategyKind::EarlyStop,
        StrategyKind::Asc,
        StrategyKind::AscConf,
        StrategyKind::Esc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Pass1 => "pass1",
            StrategyKind::BestOfN => "best_of_n",
            StrategyKind::Sc => "sc",
            StrategyKind::ScConf => "sc_conf",
            StrategyKind::Asc => "asc",
            StrategyKind::AscConf => "asc_conf",
            StrategyKind::EarlyStop => "early_stop",
            StrategyKind::Esc => "esc",
        }
    }

    /// Whether the strategy stops on a threshold `tau`.
    pub fn uses_threshold(self) -> bool {
        matches!(
            self,
            StrategyKind::Asc | StrategyKind::AscConf | StrategyKind::EarlyStop
        )
    }

    pub fn uses_confidence(self) -> bool {
        matches!(
            self,
            StrategyKind::BestOfN
                | StrategyKind::ScConf
                | StrategyKind::AscConf
                | StrategyKind::EarlyStop
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let kind = match key.as_str() {
            "pass1" | "pass" => StrategyKind::Pass1,
            "bestofn" | "bon" => StrategyKind::BestOfN,
            "sc" => StrategyKind::Sc,
            "scconf" => StrategyKind::ScConf,
            "asc" => StrategyKind::Asc,
            "ascconf" => StrategyKind::AscConf,
            "earlystop" | "earlystopping" | "es" => StrategyKind::EarlyStop,
            "esc" => StrategyKind::Esc,
            _ => return Err(StrategyError::InvalidConfig(format!("unknown strategy {s:?}"))),
        };
        Ok(kind)
    }
}

/// Thresholds above 1 never trigger: no confidence or relative frequency
/// can reach them, so the strategy always runs to `n_max`.
pub const NEVER_STOP_TAU: f64 = 1.0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub n_max: usize,
    pub tau: Option<f64>,
    pub k_min: usize,
    pub window: usize,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, n_max: usize) -> Self {
        StrategyConfig {
            kind,
            n_max,
            tau: None,
            k_min: 2,
            window: 4,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_k_min(mut self, k_min: usize) -> Self {
        self.k_min = k_min;
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |m: String| Err(StrategyError::InvalidConfig(m));
        if self.n_max == 0 {
            return bad("n_max must be positive".into());
        }
        match (self.kind.uses_threshold(), self.tau) {
            (true, None) => return bad(format!("{} requires tau", self.kind)),
            (true, Some(t)) if !(0.0..=NEVER_STOP_TAU).contains(&t) => {
                return bad(format!("tau must be in [0, 1] (or {NEVER_STOP_TAU} for never), got {t}"))
            }
            _ => {}
        }
        if matches!(self.kind, StrategyKind::Asc | StrategyKind::AscConf) && self.k_min < 2 {
            return bad("k_min must be >= 2".into());
        }
        if self.kind == StrategyKind::Esc && self.window < 2 {
            return bad("window must be >= 2".into());
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        self.tau.unwrap_or(0.0)
    }
}

/// What a strategy saw at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub answer: Option<CanonicalAnswer>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub index: usize,
    pub answer: Option<CanonicalAnswer>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub answer: Option<CanonicalAnswer>,
    pub samples_used: usize,
    pub trace: Vec<TraceEntry>,
}

/// Sequential access to a query's responses.
pub trait ResponseSource {
    /// Number of responses available, or `None` when unbounded (live).
    fn depth(&self) -> Option<usize>;

    /// The response at `index`. Called with strictly increasing indices.
    fn observe(&mut self, index: usize) -> Result<Observation, StrategyError>;
}

impl ResponseSource for &ResponsePool {
    fn depth(&self) -> Option<usize> {
        Some(self.len())
    }

    fn observe(&mut self, index: usize) -> Result<Observation, StrategyError> {
        let r = self
            .responses()
            .get(index)
            .ok_or(StrategyError::InsufficientDepth {
                needed: index + 1,
                available: self.len(),
            })?;
        Ok(Observation {
            answer: r.answer,
            confidence: r.confidence,
        })
    }
}

/// Reads responses in order and records the trace.
struct Reader<'s, S: ResponseSource> {
    source: &'s mut S,
    trace: Vec<TraceEntry>,
}

impl<'s, S: ResponseSource> Reader<'s, S> {
    fn new(source: &'s mut S, cfg: &StrategyConfig) -> Result<Self, StrategyError> {
        cfg.validate()?;
        match source.depth() {
            Some(0) => return Err(StrategyError::EmptyPool),
            Some(d) if d < cfg.n_max => {
                return Err(StrategyError::InsufficientDepth {
                    needed: cfg.n_max,
                    available: d,
                })
            }
            _ => {}
        }
        Ok(Reader {
            source,
            trace: Vec::with_capacity(cfg.n_max),
        })
    }

    fn next(&mut self) -> Result<TraceEntry, StrategyError> {
        let index = self.trace.len();
        let obs = self.source.observe(index)?;
        let entry = TraceEntry {
            index,
            answer: obs.answer,
            confidence: obs.confidence,
        };
        self.trace.push(entry);
        Ok(entry)
    }

    fn finish(self, answer: Option<CanonicalAnswer>) -> StrategyOutcome {
        StrategyOutcome {
            answer,
            samples_used: self.trace.len(),
            trace: self.trace,
        }
    }
}

fn confidence_of(e: &TraceEntry) -> Result<f64, StrategyError> {
    e.confidence
        .ok_or(StrategyError::MissingConfidence { index: e.index })
}

/// Running vote totals grouped by answer, in first-occurrence order.
#[derive(Debug, Default)]
struct Tally {
    groups: Vec<(CanonicalAnswer, usize, f64)>,
    total_weight: f64,
    seen: usize,
}

impl Tally {
    fn add(&mut self, answer: Option<CanonicalAnswer>, weight: f64) {
        self.seen += 1;
        self.total_weight += weight;
        let Some(a) = answer else { return };
        match self.groups.iter_mut().find(|(g, _, _)| answers_equal(g, &a)) {
            Some((_, count, w)) => {
                *count += 1;
                *w += weight;
            }
            None => self.groups.push((a, 1, weight)),
        }
    }

    /// Most frequent answer; earliest first occurrence wins ties.
    fn by_count(&self) -> Option<(CanonicalAnswer, usize)> {
        let mut best: Option<(CanonicalAnswer, usize)> = None;
        for (a, c, _) in &self.groups {
            if best.is_none_or(|(_, bc)| *c > bc) {
                best = Some((*a, *c));
            }
        }
        best
    }

    /// Heaviest answer; earliest first occurrence wins ties.
    fn by_weight(&self) -> Option<(CanonicalAnswer, f64)> {
        let mut best: Option<(CanonicalAnswer, f64)> = None;
        for (a, _, w) in &self.groups {
            if best.is_none_or(|(_, bw)| *w > bw) {
                best = Some((*a, *w));
            }
        }
        best
    }

    fn all_weights_zero(&self) -> bool {
        self.groups.iter().all(|(_, _, w)| *w == 0.0)
    }
}

/// Dispatches on `cfg.kind`.
pub fn run_strategy<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    match cfg.kind {
        StrategyKind::Pass1 => run_pass1(source, cfg),
        StrategyKind::BestOfN => run_best_of_n(source, cfg),
        StrategyKind::Sc => run_self_consistency(source, cfg, false),
        StrategyKind::ScConf => run_self_consistency(source, cfg, true),
        StrategyKind::Asc => run_adaptive(source, cfg, false),
        StrategyKind::AscConf => run_adaptive(source, cfg, true),
        StrategyKind::EarlyStop => run_early_stopping(source, cfg),
        StrategyKind::Esc => run_esc(source, cfg),
    }
}

fn run_pass1<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let mut reader = Reader::new(source, &StrategyConfig { n_max: 1, ..*cfg })?;
    let first = reader.next()?;
    Ok(reader.finish(first.answer))
}

fn run_best_of_n<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let mut reader = Reader::new(source, cfg)?;
    let mut best: Option<(f64, Option<CanonicalAnswer>)> = None;
    for _ in 0..cfg.n_max {
        let e = reader.next()?;
        let c = confidence_of(&e)?;
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, e.answer));
        }
    }
    Ok(reader.finish(best.and_then(|(_, a)| a)))
}

fn run_self_consistency<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
    weighted: bool,
) -> Result<StrategyOutcome, StrategyError> {
    let mut reader = Reader::new(source, cfg)?;
    let mut tally = Tally::default();
    for _ in 0..cfg.n_max {
        let e = reader.next()?;
        let w = if weighted { confidence_of(&e)? } else { 1.0 };
        tally.add(e.answer, w);
    }
    let answer = if weighted && !tally.all_weights_zero() {
        tally.by_weight().map(|(a, _)| a)
    } else {
        tally.by_count().map(|(a, _)| a)
    };
    match answer {
        Some(a) => Ok(reader.finish(Some(a))),
        None => Err(StrategyError::AllInvalid(cfg.n_max)),
    }
}

fn run_adaptive<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
    weighted: bool,
) -> Result<StrategyOutcome, StrategyError> {
    let tau = cfg.tau();
    let mut reader = Reader::new(source, cfg)?;
    let mut tally = Tally::default();
    for k in 1..=cfg.n_max {
        let e = reader.next()?;
        let w = if weighted { confidence_of(&e)? } else { 1.0 };
        tally.add(e.answer, w);
        if k < cfg.k_min {
            continue;
        }
        let max_freq = if weighted {
            match tally.by_weight() {
                Some((_, w)) if tally.total_weight > 0.0 => w / tally.total_weight,
                _ => 0.0,
            }
        } else {
            tally.by_count().map_or(0.0, |(_, c)| c as f64 / k as f64)
        };
        if max_freq >= tau {
            break;
        }
    }
    let answer = if weighted && !tally.all_weights_zero() {
        tally.by_weight().map(|(a, _)| a)
    } else {
        tally.by_count().map(|(a, _)| a)
    };
    Ok(reader.finish(answer))
}

fn run_early_stopping<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let tau = cfg.tau();
    let mut reader = Reader::new(source, cfg)?;
    let mut best: Option<(f64, Option<CanonicalAnswer>)> = None;
    for _ in 0..cfg.n_max {
        let e = reader.next()?;
        let c = confidence_of(&e)?;
        if c >= tau {
            return Ok(reader.finish(e.answer));
        }
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, e.answer));
        }
    }
    Ok(reader.finish(best.and_then(|(_, a)| a)))
}

fn run_esc<S: ResponseSource>(
    source: &mut S,
    cfg: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let mut reader = Reader::new(source, cfg)?;
    let mut tally = Tally::default();
    let mut window: Vec<Option<CanonicalAnswer>> = Vec::with_capacity(cfg.window);
    for _ in 0..cfg.n_max {
        let e = reader.next()?;
        tally.add(e.answer, 1.0);
        window.push(e.answer);
        if window.len() == cfg.window {
            let mut valid = window.iter().flatten();
            let unanimous = match valid.next() {
                Some(first) => valid.all(|a| answers_equal(a, first)),
                None => false,
            };
            if unanimous {
                break;
            }
            window.clear();
        }
    }
    let answer = tally.by_count().map(|(a, _)| a);
    Ok(reader.finish(answer))
}

macro_rules! replay_op {
    ($(#[$doc:meta])* $name:ident, $kind:expr) => {
        $(#[$doc])*
        pub fn $name(pool: &ResponsePool, cfg: &StrategyConfig) -> Result<StrategyOutcome, StrategyError> {
            let cfg = StrategyConfig { kind: $kind, ..*cfg };
            run_strategy(&mut &*pool, &cfg)
        }
    };
}

replay_op!(
    /// The first response's answer.
    pass_at_1, StrategyKind::Pass1);
replay_op!(
    /// Answer of the highest-confidence response among the first `n_max`.
    best_of_n, StrategyKind::BestOfN);
replay_op!(
    /// Plurality vote over the first `n_max` answers.
    self_consistency, StrategyKind::Sc);
replay_op!(
    /// Confidence-weighted vote; falls back to plurality when every weight is 0.
    sc_with_conf, StrategyKind::ScConf);
replay_op!(
    /// Samples until the leading answer's relative frequency reaches `tau`
    /// (checked from `k_min` on).
    adaptive_sc, StrategyKind::Asc);
replay_op!(
    /// Like [`adaptive_sc`] with confidence-weighted relative frequency.
    adaptive_sc_conf, StrategyKind::AscConf);
replay_op!(
    /// Stops at the first response with confidence >= `tau`; otherwise
    /// Best-of-N over the first `n_max`.
    early_stopping, StrategyKind::EarlyStop);
replay_op!(
    /// Stops after the first window whose extractable answers are unanimous,
    /// then takes a plurality vote over everything consumed.
    esc, StrategyKind::Esc);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn l(c: char) -> CanonicalAnswer {
        CanonicalAnswer::OptionLetter(c)
    }

    fn pool(answers: &str, confs: &[f64]) -> ResponsePool {
        let items: Vec<_> = answers
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let a = if c == '_' { None } else { Some(l(c)) };
                (a, confs.get(i).copied())
            })
            .collect();
        ResponsePool::from_answers("q", items).unwrap()
    }

    fn cfg(kind: StrategyKind, n: usize) -> StrategyConfig {
        StrategyConfig::new(kind, n)
    }

    #[test]
    fn best_of_n_examples() {
        let p = pool("ABC", &[0.2, 0.9, 0.5]);
        let o = best_of_n(&p, &cfg(StrategyKind::BestOfN, 3)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('B')), 3));
        let tie = pool("AB", &[0.5, 0.5]);
        assert_eq!(best_of_n(&tie, &cfg(StrategyKind::BestOfN, 2)).unwrap().answer, Some(l('A')));
        let o = best_of_n(&p, &cfg(StrategyKind::BestOfN, 1)).unwrap();
        assert_eq!(o.answer, pass_at_1(&p, &cfg(StrategyKind::Pass1, 1)).unwrap().answer);
        assert!(matches!(
            best_of_n(&pool("AB", &[0.5]), &cfg(StrategyKind::BestOfN, 2)),
            Err(StrategyError::MissingConfidence { index: 1 })
        ));
    }

    #[test]
    fn self_consistency_examples() {
        let c = cfg(StrategyKind::Sc, 3);
        assert_eq!(self_consistency(&pool("ABA", &[]), &c).unwrap().answer, Some(l('A')));
        assert_eq!(
            self_consistency(&pool("AB", &[]), &cfg(StrategyKind::Sc, 2)).unwrap().answer,
            Some(l('A'))
        );
        assert_eq!(
            self_consistency(&pool("_BB", &[]), &c).unwrap().answer,
            Some(l('B'))
        );
        assert_eq!(
            self_consistency(&pool("___", &[]), &c),
            Err(StrategyError::AllInvalid(3))
        );
    }

    #[test]
    fn errors_for_bad_pools_and_configs() {
        let empty = ResponsePool::from_answers("q", Vec::new()).unwrap();
        assert_eq!(self_consistency(&empty, &cfg(StrategyKind::Sc, 1)), Err(StrategyError::EmptyPool));
        assert!(matches!(
            self_consistency(&pool("AB", &[]), &cfg(StrategyKind::Sc, 3)),
            Err(StrategyError::InsufficientDepth { needed: 3, available: 2 })
        ));
        assert!(adaptive_sc(&pool("AB", &[]), &cfg(StrategyKind::Asc, 2)).is_err());
        let bad_kmin = cfg(StrategyKind::Asc, 2).with_tau(0.5).with_k_min(1);
        assert!(matches!(bad_kmin.validate(), Err(StrategyError::InvalidConfig(_))));
        assert!(cfg(StrategyKind::Esc, 2).with_window(1).validate().is_err());
        assert!(cfg(StrategyKind::EarlyStop, 2).with_tau(1.5).validate().is_err());
    }

    #[test]
    fn sc_with_conf_examples() {
        let p = pool("AAB", &[0.1, 0.1, 0.9]);
        assert_eq!(sc_with_conf(&p, &cfg(StrategyKind::ScConf, 3)).unwrap().answer, Some(l('B')));
        let zero = pool("ABB", &[0.0, 0.0, 0.0]);
        assert_eq!(sc_with_conf(&zero, &cfg(StrategyKind::ScConf, 3)).unwrap().answer, Some(l('B')));
    }

    #[test]
    fn adaptive_examples() {
        let tau = |t| cfg(StrategyKind::Asc, 10).with_tau(t);
        let o = adaptive_sc(&pool("AAAAAAAAAA", &[]), &tau(0.7)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 2));
        // k=2: 1/2, k=3: 2/3, k=4: 3/4
        let o = adaptive_sc(&pool("ABAA", &[]), &cfg(StrategyKind::Asc, 4).with_tau(0.75)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 4));
        let o = adaptive_sc(&pool("AAAAAAAAAB", &[]), &tau(1.0)).unwrap();
        assert_eq!(o.samples_used, 2);
        let o = adaptive_sc(&pool("ABAAAAAAAA", &[]), &tau(1.0)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 10));

        let c = cfg(StrategyKind::AscConf, 2).with_tau(0.85);
        let o = adaptive_sc_conf(&pool("AB", &[0.9, 0.1]), &c).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 2));
        let zero = adaptive_sc_conf(&pool("ABAB", &[0.0; 4]), &cfg(StrategyKind::AscConf, 4).with_tau(0.5))
            .unwrap();
        assert_eq!(zero.samples_used, 4);
    }

    #[test]
    fn early_stopping_examples() {
        let c = |t| cfg(StrategyKind::EarlyStop, 4).with_tau(t);
        let p = pool("ABCD", &[0.3, 0.95, 0.99, 0.1]);
        let o = early_stopping(&p, &c(0.9)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('B')), 2));
        let o = early_stopping(&p, &c(0.999)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('C')), 4));
        let o = early_stopping(&p, &c(0.0)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 1));
        let o = early_stopping(&p, &c(NEVER_STOP_TAU)).unwrap();
        assert_eq!(o.samples_used, 4);
    }

    #[test]
    fn esc_examples() {
        let o = esc(&pool("AAAAAAAA", &[]), &cfg(StrategyKind::Esc, 8).with_window(2)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 2));
        let o = esc(&pool("ABAA", &[]), &cfg(StrategyKind::Esc, 4).with_window(2)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 4));
        let o = esc(&pool("ABBA_A", &[]), &cfg(StrategyKind::Esc, 6).with_window(2)).unwrap();
        assert_eq!((o.answer, o.samples_used), (Some(l('A')), 6));
        let o = esc(&pool("__", &[]), &cfg(StrategyKind::Esc, 2).with_window(2)).unwrap();
        assert_eq!((o.answer, o.samples_used), (None, 2));
    }

    #[test]
    fn trace_records_consumed_prefix() {
        let p = pool("ABAA", &[0.1, 0.2, 0.3, 0.4]);
        let o = early_stopping(&p, &cfg(StrategyKind::EarlyStop, 4).with_tau(0.25)).unwrap();
        assert_eq!(o.trace.len(), 3);
        assert_eq!(o.trace[2], TraceEntry { index: 2, answer: Some(l('A')), confidence: Some(0.3) });
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("SC-Conf".parse::<StrategyKind>().unwrap(), StrategyKind::ScConf);
        assert!("rasc".parse::<StrategyKind>().is_err());
    }

    fn random_pool(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Option<char>, f64)> {
        let k = rng.random_range(1..=5u8);
        (0..n)
            .map(|_| {
                let a = if rng.random::<f64>() < 0.08 {
                    None
                } else {
                    Some((b'A' + rng.random_range(0..k)) as char)
                };
                (a, rng.random::<f64>())
            })
            .collect()
    }

    fn to_pool(items: &[(Option<char>, f64)]) -> ResponsePool {
        ResponsePool::from_answers("q", items.iter().map(|(a, c)| (a.map(l), Some(*c)))).unwrap()
    }

    /// Brute-force vote: per letter, (score, first index); best score, then earliest.
    fn vote_oracle(items: &[(Option<char>, f64)], weighted: bool) -> Option<char> {
        let mut table: HashMap<char, (f64, usize)> = HashMap::new();
        for (i, (a, c)) in items.iter().enumerate() {
            if let Some(a) = a {
                let e = table.entry(*a).or_insert((0.0, i));
                e.0 += if weighted { *c } else { 1.0 };
            }
        }
        let mut rows: Vec<(char, f64, usize)> = table.into_iter().map(|(a, (s, i))| (a, s, i)).collect();
        rows.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.2.cmp(&y.2)));
        rows.first().map(|r| r.0)
    }

    #[test]
    fn votes_match_counting_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = rng.random_range(1..24);
            let items = random_pool(&mut rng, n);
            let p = to_pool(&items);
            for (kind, weighted) in [(StrategyKind::Sc, false), (StrategyKind::ScConf, true)] {
                let got = run_strategy(&mut &p, &cfg(kind, n));
                match vote_oracle(&items, weighted) {
                    Some(want) => assert_eq!(got.unwrap().answer, Some(l(want))),
                    None => assert_eq!(got, Err(StrategyError::AllInvalid(n))),
                }
            }
        }
    }

    /// Step-by-step simulator recomputing frequencies from scratch at every k.
    fn adaptive_oracle(
        items: &[(Option<char>, f64)],
        tau: f64,
        k_min: usize,
        weighted: bool,
    ) -> (Option<char>, usize) {
        let n = items.len();
        let mut stop = n;
        for k in k_min..=n {
            let prefix = &items[..k];
            let denom: f64 = if weighted { prefix.iter().map(|(_, c)| c).sum() } else { k as f64 };
            let mut best = 0.0f64;
            for letter in 'A'..='E' {
                let mass: f64 = prefix
                    .iter()
                    .filter(|(a, _)| *a == Some(letter))
                    .map(|(_, c)| if weighted { *c } else { 1.0 })
                    .sum();
                if denom > 0.0 {
                    best = best.max(mass / denom);
                }
            }
            if best >= tau {
                stop = k;
                break;
            }
        }
        (vote_oracle(&items[..stop.max(1).min(n)], weighted), stop.min(n).max(1.min(n)))
    }

    #[test]
    fn adaptive_matches_step_simulator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let n = rng.random_range(2..24);
            let items = random_pool(&mut rng, n);
            let tau = rng.random_range(0.3..1.0);
            let k_min = rng.random_range(2..=4);
            let p = to_pool(&items);
            for (kind, weighted) in [(StrategyKind::Asc, false), (StrategyKind::AscConf, true)] {
                let c = cfg(kind, n).with_tau(tau).with_k_min(k_min);
                let got = run_strategy(&mut &p, &c).unwrap();
                let (want_answer, want_stop) = adaptive_oracle(&items, tau, k_min.min(n), weighted);
                assert_eq!(got.samples_used, want_stop, "{items:?} tau={tau} kmin={k_min}");
                assert_eq!(got.answer, want_answer.map(l));
            }
        }
    }

    #[test]
    fn reductions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.random_range(2..20);
            let items = random_pool(&mut rng, n);
            let c = rng.random_range(0.01..1.0);
            let uniform: Vec<_> = items.iter().map(|(a, _)| (*a, c)).collect();
            let ones: Vec<_> = items.iter().map(|(a, _)| (*a, 1.0)).collect();
            let (pu, p1, p) = (to_pool(&uniform), to_pool(&ones), to_pool(&items));

            let sc = self_consistency(&pu, &cfg(StrategyKind::Sc, n));
            let scc = sc_with_conf(&pu, &cfg(StrategyKind::ScConf, n));
            assert_eq!(sc.map(|o| (o.answer, o.samples_used)), scc.map(|o| (o.answer, o.samples_used)));

            let tau = rng.random_range(0.3..1.0);
            let asc = adaptive_sc(&p1, &cfg(StrategyKind::Asc, n).with_tau(tau)).unwrap();
            let ascc = adaptive_sc_conf(&p1, &cfg(StrategyKind::AscConf, n).with_tau(tau)).unwrap();
            assert_eq!((asc.answer, asc.samples_used), (ascc.answer, ascc.samples_used));

            let es = early_stopping(&p, &cfg(StrategyKind::EarlyStop, n).with_tau(0.0)).unwrap();
            let p1st = pass_at_1(&p, &cfg(StrategyKind::Pass1, 1)).unwrap();
            assert_eq!((es.answer, es.samples_used), (p1st.answer, p1st.samples_used));
        }
    }

    proptest! {
        #[test]
        fn outcome_depends_only_on_consumed_prefix(
            seed in 0u64..10_000,
            kind_ix in 0usize..8,
            tau in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..16);
            let items = random_pool(&mut rng, n);
            let kind = StrategyKind::ALL[kind_ix];
            let c = cfg(kind, n).with_tau(tau).with_window(2);
            let p = to_pool(&items);
            let Ok(o) = run_strategy(&mut &p, &c) else { return Ok(()) };
            prop_assert!(o.samples_used <= n && o.samples_used >= 1);
            // scramble everything after the consumed prefix
            let mut altered = items.clone();
            for item in altered.iter_mut().skip(o.samples_used) {
                *item = (Some('E'), 1.0);
            }
            let o2 = run_strategy(&mut &to_pool(&altered), &c).unwrap();
            prop_assert_eq!(o.answer, o2.answer);
            prop_assert_eq!(o.samples_used, o2.samples_used);
        }
    }
}
