//! Run configuration: a TOML document overridden by command-line flags,
//! which in turn override built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use detox_chain::oracles::SamplingConfig;
use detox_chain::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub split_ratio: Option<String>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub oracles: OracleConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub sampling: SamplingSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// `mock` or `remote`.
    pub toxicity: String,
    /// Lexicon JSON path for the mock oracle: `{"word": score}`.
    pub lexicon: Option<PathBuf>,
    /// Token the mock filler substitutes for each placeholder.
    pub filler_word: Option<String>,
    /// Analyze endpoint for the remote toxicity service.
    pub endpoint: Option<String>,
    /// Requests per second for the remote client.
    pub rate_limit: Option<f64>,
    /// Max attempts per remote call.
    pub retries: Option<usize>,
    /// Completions endpoint for the remote chat backend.
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    /// Scripted chat answers (JSON array of strings) for offline API runs.
    pub chat_script: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            toxicity: "mock".to_string(),
            lexicon: None,
            filler_word: None,
            endpoint: None,
            rate_limit: None,
            retries: None,
            llm_endpoint: None,
            llm_model: None,
            chat_script: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub max_iters: Option<usize>,
    pub placeholder: Option<String>,
    pub sim_floor: Option<f64>,
    pub ppl_ceiling: Option<f64>,
    pub min_prompt_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
    pub max_length: Option<usize>,
    pub num_samples: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag values collected from the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub max_iters: Option<usize>,
    pub placeholder: Option<String>,
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
    pub num_samples: Option<usize>,
    pub oracle: Option<String>,
}

/// The fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub split_ratio: (u32, u32),
    pub pipeline: PipelineConfig,
    #[serde(skip)]
    pub paths: Paths,
    pub oracles: OracleConfig,
}

/// Resolution order: flags win over the file, the file wins over defaults.
pub fn resolve(file: Option<FileConfig>, flags: &FlagOverrides) -> Result<RunConfig> {
    let file = file.unwrap_or_default();
    let seed = flags.seed.or(file.seed).unwrap_or(0);

    let sampling = SamplingConfig {
        top_p: flags
            .top_p
            .or(file.sampling.top_p)
            .unwrap_or(SamplingConfig::default().top_p),
        temperature: flags
            .temperature
            .or(file.sampling.temperature)
            .unwrap_or(SamplingConfig::default().temperature),
        max_length: file
            .sampling
            .max_length
            .unwrap_or(SamplingConfig::default().max_length),
        num_samples: flags
            .num_samples
            .or(file.sampling.num_samples)
            .unwrap_or(SamplingConfig::default().num_samples),
    };

    let defaults = PipelineConfig::default();
    let pipeline = PipelineConfig {
        k: flags.k.or(file.pipeline.k).unwrap_or(defaults.k),
        lambda: flags
            .lambda
            .or(file.pipeline.lambda)
            .unwrap_or(defaults.lambda),
        max_attempts: flags
            .max_iters
            .or(file.pipeline.max_iters)
            .unwrap_or(defaults.max_attempts),
        placeholder: flags
            .placeholder
            .clone()
            .or(file.pipeline.placeholder)
            .unwrap_or(defaults.placeholder),
        sim_floor: file.pipeline.sim_floor.unwrap_or(defaults.sim_floor),
        ppl_ceiling: file.pipeline.ppl_ceiling.unwrap_or(defaults.ppl_ceiling),
        min_prompt_tokens: file
            .pipeline
            .min_prompt_tokens
            .unwrap_or(defaults.min_prompt_tokens),
        sampling,
        seed,
    };

    let split_ratio = match &file.split_ratio {
        Some(text) => parse_split_ratio(text)?,
        None => detox_chain::record::DEFAULT_SPLIT_RATIO,
    };

    let mut oracles = file.oracles;
    if let Some(kind) = &flags.oracle {
        oracles.toxicity = kind.clone();
    }
    if !matches!(oracles.toxicity.as_str(), "mock" | "remote") {
        anyhow::bail!(
            "oracle kind must be `mock` or `remote`, got `{}`",
            oracles.toxicity
        );
    }

    Ok(RunConfig {
        seed,
        split_ratio,
        pipeline,
        paths: file.paths,
        oracles,
    })
}

pub fn parse_split_ratio(text: &str) -> Result<(u32, u32)> {
    let (a, b) = text
        .split_once(':')
        .with_context(|| format!("split ratio `{text}` is not of the form A:B"))?;
    let a: u32 = a.trim().parse().context("split ratio left side")?;
    let b: u32 = b.trim().parse().context("split ratio right side")?;
    anyhow::ensure!(a > 0 && b > 0, "split ratio parts must be positive");
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_without_file_or_flags() {
        let config = resolve(None, &FlagOverrides::default()).unwrap();
        assert_eq!(config.seed, 0);
        assert_eq!(config.split_ratio, (9, 1));
        assert_eq!(config.pipeline.k, 2);
        assert_eq!(config.pipeline.max_attempts, 5);
        assert_eq!(config.oracles.toxicity, "mock");
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let file: FileConfig = toml::from_str(
            r#"
            seed = 11
            split_ratio = "4:1"
            [pipeline]
            k = 3
            lambda = 0.25
            [sampling]
            top_p = 0.8
            "#,
        )
        .unwrap();
        let flags = FlagOverrides {
            k: Some(5),
            ..FlagOverrides::default()
        };
        let config = resolve(Some(file), &flags).unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.split_ratio, (4, 1));
        assert_eq!(config.pipeline.k, 5, "flag wins over file");
        assert_eq!(config.pipeline.lambda, 0.25, "file wins over default");
        assert_eq!(config.pipeline.sampling.top_p, 0.8);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let parsed: Result<FileConfig, _> = toml::from_str("unknown_key = 1");
        assert!(parsed.is_err());
    }

    #[test]
    fn split_ratio_parsing() {
        assert_eq!(parse_split_ratio("9:1").unwrap(), (9, 1));
        assert!(parse_split_ratio("9").is_err());
        assert!(parse_split_ratio("0:1").is_err());
    }

    #[test]
    fn bad_oracle_kind_is_rejected() {
        let flags = FlagOverrides {
            oracle: Some("imaginary".into()),
            ..FlagOverrides::default()
        };
        assert!(resolve(None, &flags).is_err());
    }
}
