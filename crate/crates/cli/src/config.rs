//! Run configuration. Every command reads one [`RunConfig`], built from an
//! optional TOML file with command-line flags layered on top, and embeds it
//! in every file it writes.

use std::path::{Path, PathBuf};

use confscale_core::backend::ApiMode;
use confscale_core::edt::EdtParams;
use confscale_core::persistence::ConfidenceSource;
use confscale_core::prompts::ConfidencePrompt;
use confscale_core::strategies::StrategyKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub api_base: Option<String>,
    pub model: Option<String>,
    /// Second model whose P(True) fills the vanilla confidence column.
    pub vanilla_model: Option<String>,
    pub api_mode: ApiMode,
    pub max_in_flight: usize,
    pub top_logprobs: u32,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    /// Synthetic confidence law for the calibrated column.
    pub law: String,
    /// Synthetic confidence law for the vanilla column.
    pub vanilla_law: Option<String>,
    pub n_candidates: usize,
    pub concentration: f64,
    pub invalid_rate: f64,
    /// Overrides the `generated_at` stamp of pool headers.
    pub generated_at: Option<String>,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Synthetic,
            api_base: None,
            model: None,
            vanilla_model: None,
            api_mode: ApiMode::Chat,
            max_in_flight: 8,
            top_logprobs: 20,
            timeout_secs: 120,
            max_attempts: 5,
            law: "calibrated".into(),
            vanilla_law: None,
            n_candidates: 4,
            concentration: 0.6,
            invalid_rate: 0.0,
            generated_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub n_max: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// A named instruction (`default`, `i1`..`i6`) or literal instruction text.
    pub conf_prompt: String,
    pub max_queries: Option<usize>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            n_max: 16,
            temperature: 1.0,
            max_tokens: 1024,
            conf_prompt: "default".into(),
            max_queries: None,
        }
    }
}

impl SamplingSection {
    pub fn confidence_prompt(&self) -> Result<ConfidencePrompt, CliError> {
        ConfidencePrompt::by_name(&self.conf_prompt)
            .or_else(|_| ConfidencePrompt::new(self.conf_prompt.clone()))
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub n_samples: usize,
    pub eta: f64,
    pub omega: f64,
    pub balance_cap: Option<usize>,
    pub n_bins: usize,
    /// Fraction of each `--queries` file to draw, in file order.
    pub mix: Vec<f64>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            n_samples: confscale_core::dataset::DEFAULT_SAMPLES,
            eta: confscale_core::dataset::DEFAULT_ETA,
            omega: confscale_core::dataset::DEFAULT_OMEGA,
            balance_cap: None,
            n_bins: 10,
            mix: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub strategies: Vec<StrategyKind>,
    pub budgets: Vec<f64>,
    /// Ceiling for threshold strategies; defaults to the pool depth.
    pub n_max: Option<usize>,
    pub k_min: usize,
    pub window: usize,
    /// Fixed threshold for every threshold strategy (skips calibration).
    pub tau: Option<f64>,
    pub conf_source: ConfidenceSource,
    pub holdout_frac: f64,
    pub global: bool,
    pub live: bool,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            strategies: StrategyKind::ALL.to_vec(),
            budgets: vec![4.0, 8.0, 16.0],
            n_max: None,
            k_min: 2,
            window: 4,
            tau: None,
            conf_source: ConfidenceSource::Calibrated,
            holdout_frac: 0.0,
            global: false,
            live: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub n_bins: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { n_bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub queries: Vec<PathBuf>,
    pub pools: Vec<PathBuf>,
    pub records: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub parallel: usize,
    pub backend: BackendSection,
    pub sampling: SamplingSection,
    pub edt: EdtParams,
    pub generation: GenerationSection,
    pub strategy: StrategySection,
    pub metrics: MetricsSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            parallel: 8,
            backend: BackendSection::default(),
            sampling: SamplingSection::default(),
            edt: EdtParams::default(),
            generation: GenerationSection::default(),
            strategy: StrategySection::default(),
            metrics: MetricsSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config always serializes")
    }

    pub fn out_path(&self) -> Result<&Path, CliError> {
        self.paths
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    /// Seed for synthetic or otherwise seeded runs; there is no clock fallback.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("--seed is required for this run".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.parallel == 0 {
            return bad("--parallel must be positive".into());
        }
        if self.sampling.n_max == 0 {
            return bad("--n-max must be positive".into());
        }
        if !(self.sampling.temperature >= 0.0 && self.sampling.temperature.is_finite()) {
            return bad("--temperature must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.strategy.holdout_frac) {
            return bad("--holdout-frac must be in [0, 1)".into());
        }
        if self.metrics.n_bins == 0 || self.generation.n_bins < 2 {
            return bad("bin counts must be positive (>= 2 for balancing)".into());
        }
        if self.generation.mix.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("--mix fractions must be in [0, 1]".into());
        }
        self.edt
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}
