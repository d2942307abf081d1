//! Campaign configuration: a key-value file plus flag overrides (flags win).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Environment variable holding the remote generator credential.
pub const GENERATOR_TOKEN_ENV: &str = "TRAJFORGE_GENERATOR_TOKEN";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seeds: Option<PathBuf>,
    pub bundles: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub generator_url: Option<String>,
    pub generator_token: Option<String>,
    pub out: PathBuf,
    pub k: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub audit_every: usize,
    pub audit_sample_fraction: f64,
    pub wm_learning_rate: f64,
    pub wm_epochs: usize,
    pub wm_l2: f64,
    pub wm_seed: u64,
    pub wm_params: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub sim_corpus: Option<PathBuf>,
    pub verify_final: bool,
    pub stats_multi_turn: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: None,
            bundles: None,
            policy: None,
            generator_url: None,
            generator_token: None,
            out: PathBuf::from("out"),
            k: 4,
            parallelism: 4,
            seed: 1,
            audit_every: 100,
            audit_sample_fraction: 0.1,
            wm_learning_rate: 0.5,
            wm_epochs: 150,
            wm_l2: 1e-4,
            wm_seed: 7,
            wm_params: None,
            corpus: None,
            sim_corpus: None,
            verify_final: true,
            stats_multi_turn: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Parse a `key = value` config file. Unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {line_no}: expected `key = value`"))?;
            config
                .set(key.trim(), value.trim())
                .with_context(|| format!("config line {line_no}"))?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = || {
            value
                .parse::<usize>()
                .with_context(|| format!("`{key}` must be an unsigned integer, got `{value}`"))
        };
        let parse_u64 = || {
            value
                .parse::<u64>()
                .with_context(|| format!("`{key}` must be an unsigned integer, got `{value}`"))
        };
        let parse_f64 = || {
            value
                .parse::<f64>()
                .with_context(|| format!("`{key}` must be a number, got `{value}`"))
        };
        match key {
            "seeds" => self.seeds = Some(PathBuf::from(value)),
            "bundles" => self.bundles = Some(PathBuf::from(value)),
            "policy" => self.policy = Some(PathBuf::from(value)),
            "generator.url" => self.generator_url = Some(value.to_string()),
            "generator.token" => self.generator_token = Some(value.to_string()),
            "out" => self.out = PathBuf::from(value),
            "k" => self.k = parse_usize()?,
            "parallelism" => self.parallelism = parse_usize()?,
            "seed" => self.seed = parse_u64()?,
            "audit.every" => self.audit_every = parse_usize()?,
            "audit.sample_fraction" => self.audit_sample_fraction = parse_f64()?,
            "wm.learning_rate" => self.wm_learning_rate = parse_f64()?,
            "wm.epochs" => self.wm_epochs = parse_usize()?,
            "wm.l2" => self.wm_l2 = parse_f64()?,
            "wm.seed" => self.wm_seed = parse_u64()?,
            "wm.params" => self.wm_params = Some(PathBuf::from(value)),
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "sim_corpus" => self.sim_corpus = Some(PathBuf::from(value)),
            "verify_final" => {
                self.verify_final = match value {
                    "true" => true,
                    "false" => false,
                    other => bail!("`verify_final` must be true or false, got `{other}`"),
                }
            }
            "stats.multi_turn" => {
                self.stats_multi_turn = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Reject non-positive campaign parameters.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be positive");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be positive");
        }
        if self.audit_every == 0 {
            bail!("audit.every must be positive");
        }
        if !(self.audit_sample_fraction > 0.0 && self.audit_sample_fraction <= 1.0) {
            bail!("audit.sample_fraction must be in (0, 1]");
        }
        if self.wm_learning_rate <= 0.0 {
            bail!("wm.learning_rate must be positive");
        }
        if self.wm_epochs == 0 {
            bail!("wm.epochs must be positive");
        }
        if self.wm_l2 <= 0.0 {
            bail!("wm.l2 must be positive");
        }
        Ok(())
    }

    pub fn wm_params_path(&self) -> PathBuf {
        self.wm_params
            .clone()
            .unwrap_or_else(|| self.out.join("icwm.params"))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out.join("corpus_real.records"))
    }

    pub fn sim_corpus_path(&self) -> PathBuf {
        self.sim_corpus
            .clone()
            .unwrap_or_else(|| self.out.join("corpus_icwm.records"))
    }

    /// Token resolution order: config key, then the environment variable.
    pub fn resolved_generator_token(&self) -> Option<String> {
        self.generator_token
            .clone()
            .or_else(|| std::env::var(GENERATOR_TOKEN_ENV).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key_and_applies_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.conf");
        fs::write(
            &path,
            "# campaign\nseeds = seeds.jsonl\nbundles = bundles\npolicy = policy.txt\n\
             k = 3\nparallelism = 2\nseed = 9\naudit.every = 5\naudit.sample_fraction = 0.5\n\
             wm.learning_rate = 0.25\nwm.epochs = 10\nwm.l2 = 0.001\nwm.seed = 11\n\
             verify_final = false\nstats.multi_turn = agentic, swe\n",
        )
        .unwrap();
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.k, 3);
        assert_eq!(config.parallelism, 2);
        assert_eq!(config.seed, 9);
        assert_eq!(config.audit_every, 5);
        assert!(!config.verify_final);
        assert!(config.stats_multi_turn.contains("agentic"));
        assert!(config.stats_multi_turn.contains("swe"));
        assert_eq!(config.out, PathBuf::from("out"));
        config.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campaign.conf");
        fs::write(&path, "frobnicate = 1\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn validation_rejects_non_positive_values() {
        let mut config = RunConfig::default();
        config.k = 0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.audit_sample_fraction = 1.5;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.wm_l2 = 0.0;
        assert!(config.validate().is_err());
    }
}
