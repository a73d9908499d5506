//! Flat `key=value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys and values are
//! trimmed; `char_alphabet` is written with `\s` for a space, `\t` for a tab
//! and `\\` for a backslash so trailing spaces survive.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::crf::CrfTrainConfig;
use crate::error::{Error, Result};
use crate::featurizer::{default_alphabet, FeatureConfig, WordEmbeddings};
use crate::neural::TrainConfig;
use crate::topics::{InferConfig, LdaConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub min_support: usize,
    pub folds: usize,

    pub char_alphabet: Vec<char>,
    pub word_dim: usize,
    pub para_dim: usize,
    pub hash_seed: u64,
    pub embeddings: Option<PathBuf>,

    pub lda_topics: usize,
    /// `None` means `50 / lda_topics`.
    pub lda_alpha: Option<f64>,
    pub lda_beta: f64,
    pub lda_iterations: usize,
    pub lda_vocab_cap: usize,
    pub infer_iterations: usize,
    pub infer_burn_in: usize,

    pub subnet_hidden: usize,
    pub subnet_out: usize,
    pub primary_hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub standardize_stat: bool,

    pub crf_epochs: usize,
    pub crf_learning_rate: f64,
    pub crf_batch_tables: usize,
    pub crf_init_scale: f64,

    pub saliency_k: usize,
    pub permutation_trials: usize,

    pub train_lda: bool,
    pub train_topic: bool,
    pub train_crf: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let lda = LdaConfig::default();
        let infer = InferConfig::default();
        let nn = TrainConfig::default();
        let crf = CrfTrainConfig::default();
        PipelineConfig {
            seed: 0,
            min_support: 20,
            folds: 5,
            char_alphabet: default_alphabet(),
            word_dim: 128,
            para_dim: 128,
            hash_seed: 42,
            embeddings: None,
            lda_topics: lda.topics,
            lda_alpha: lda.alpha,
            lda_beta: lda.beta,
            lda_iterations: lda.iterations,
            lda_vocab_cap: lda.vocab_cap,
            infer_iterations: infer.iterations,
            infer_burn_in: infer.burn_in,
            subnet_hidden: 64,
            subnet_out: 32,
            primary_hidden: 128,
            dropout: 0.3,
            epochs: nn.epochs,
            learning_rate: nn.learning_rate,
            weight_decay: nn.weight_decay,
            batch_size: nn.batch_size,
            standardize_stat: nn.standardize_stat,
            crf_epochs: crf.epochs,
            crf_learning_rate: crf.learning_rate,
            crf_batch_tables: crf.batch_tables,
            crf_init_scale: 0.1,
            saliency_k: 5,
            permutation_trials: 5,
            train_lda: true,
            train_topic: true,
            train_crf: true,
        }
    }
}

/// Derives an independent seed for one pipeline stage.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const STAGE_LDA: u64 = 1;
pub(crate) const STAGE_INFER: u64 = 2;
pub(crate) const STAGE_INIT_BASE: u64 = 3;
pub(crate) const STAGE_INIT_TOPIC: u64 = 4;
pub(crate) const STAGE_TRAIN_BASE: u64 = 5;
pub(crate) const STAGE_TRAIN_TOPIC: u64 = 6;
pub(crate) const STAGE_CRF_BASE: u64 = 7;
pub(crate) const STAGE_CRF_TOPIC: u64 = 8;

fn escape_alphabet(chars: &[char]) -> String {
    let mut out = String::new();
    for &c in chars {
        match c {
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_alphabet(text: &str) -> std::result::Result<Vec<char>, String> {
    let mut out = Vec::new();
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            other => {
                return Err(format!(
                    "bad escape \\{}",
                    other.map(String::from).unwrap_or_default()
                ))
            }
        }
    }
    Ok(out)
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{value:?}: {e}"))
}

impl PipelineConfig {
    /// Every key with its current value, in a stable order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("min_support", self.min_support.to_string());
        put("folds", self.folds.to_string());
        put("char_alphabet", escape_alphabet(&self.char_alphabet));
        put("word_dim", self.word_dim.to_string());
        put("para_dim", self.para_dim.to_string());
        put("hash_seed", self.hash_seed.to_string());
        put(
            "embeddings",
            self.embeddings
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("lda_topics", self.lda_topics.to_string());
        put(
            "lda_alpha",
            self.lda_alpha.map_or("auto".into(), |a| a.to_string()),
        );
        put("lda_beta", self.lda_beta.to_string());
        put("lda_iterations", self.lda_iterations.to_string());
        put("lda_vocab_cap", self.lda_vocab_cap.to_string());
        put("infer_iterations", self.infer_iterations.to_string());
        put("infer_burn_in", self.infer_burn_in.to_string());
        put("subnet_hidden", self.subnet_hidden.to_string());
        put("subnet_out", self.subnet_out.to_string());
        put("primary_hidden", self.primary_hidden.to_string());
        put("dropout", self.dropout.to_string());
        put("epochs", self.epochs.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("standardize_stat", self.standardize_stat.to_string());
        put("crf_epochs", self.crf_epochs.to_string());
        put("crf_learning_rate", self.crf_learning_rate.to_string());
        put("crf_batch_tables", self.crf_batch_tables.to_string());
        put("crf_init_scale", self.crf_init_scale.to_string());
        put("saliency_k", self.saliency_k.to_string());
        put("permutation_trials", self.permutation_trials.to_string());
        put("train_lda", self.train_lda.to_string());
        put("train_topic", self.train_topic.to_string());
        put("train_crf", self.train_crf.to_string());
        out
    }

    /// Starts from the defaults and applies every `key=value` line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: format!("expected key=value, found {line:?}"),
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|reason| Error::Config {
                    line: i + 1,
                    reason,
                })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = parse(value)?,
            "min_support" => self.min_support = parse(value)?,
            "folds" => self.folds = parse(value)?,
            "char_alphabet" => self.char_alphabet = unescape_alphabet(value)?,
            "word_dim" => self.word_dim = parse(value)?,
            "para_dim" => self.para_dim = parse(value)?,
            "hash_seed" => self.hash_seed = parse(value)?,
            "embeddings" => self.embeddings = (!value.is_empty()).then(|| PathBuf::from(value)),
            "lda_topics" => self.lda_topics = parse(value)?,
            "lda_alpha" => {
                self.lda_alpha = if value == "auto" {
                    None
                } else {
                    Some(parse(value)?)
                };
            }
            "lda_beta" => self.lda_beta = parse(value)?,
            "lda_iterations" => self.lda_iterations = parse(value)?,
            "lda_vocab_cap" => self.lda_vocab_cap = parse(value)?,
            "infer_iterations" => self.infer_iterations = parse(value)?,
            "infer_burn_in" => self.infer_burn_in = parse(value)?,
            "subnet_hidden" => self.subnet_hidden = parse(value)?,
            "subnet_out" => self.subnet_out = parse(value)?,
            "primary_hidden" => self.primary_hidden = parse(value)?,
            "dropout" => self.dropout = parse(value)?,
            "epochs" => self.epochs = parse(value)?,
            "learning_rate" => self.learning_rate = parse(value)?,
            "weight_decay" => self.weight_decay = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "standardize_stat" => self.standardize_stat = parse(value)?,
            "crf_epochs" => self.crf_epochs = parse(value)?,
            "crf_learning_rate" => self.crf_learning_rate = parse(value)?,
            "crf_batch_tables" => self.crf_batch_tables = parse(value)?,
            "crf_init_scale" => self.crf_init_scale = parse(value)?,
            "saliency_k" => self.saliency_k = parse(value)?,
            "permutation_trials" => self.permutation_trials = parse(value)?,
            "train_lda" => self.train_lda = parse(value)?,
            "train_topic" => self.train_topic = parse(value)?,
            "train_crf" => self.train_crf = parse(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("min_support", self.min_support),
            ("folds", self.folds),
            ("word_dim", self.word_dim),
            ("para_dim", self.para_dim),
            ("lda_iterations", self.lda_iterations),
            ("lda_vocab_cap", self.lda_vocab_cap),
            ("infer_iterations", self.infer_iterations),
            ("subnet_hidden", self.subnet_hidden),
            ("subnet_out", self.subnet_out),
            ("primary_hidden", self.primary_hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("crf_epochs", self.crf_epochs),
            ("crf_batch_tables", self.crf_batch_tables),
            ("permutation_trials", self.permutation_trials),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.lda_topics < 2 {
            return Err(Error::InvalidArgument(
                "lda_topics must be at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        let rates = [
            self.learning_rate,
            self.weight_decay,
            self.crf_learning_rate,
            self.crf_init_scale,
            self.lda_beta,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0)
            || self.lda_alpha.is_some_and(|a| !(a > 0.0))
        {
            return Err(Error::InvalidArgument(
                "rates and priors must be finite and non-negative".into(),
            ));
        }
        if self.lda_beta == 0.0 {
            return Err(Error::InvalidArgument("lda_beta must be positive".into()));
        }
        self.feature_config_without_embeddings().validate()
    }

    fn feature_config_without_embeddings(&self) -> FeatureConfig {
        FeatureConfig {
            char_alphabet: self.char_alphabet.clone(),
            word_dim: self.word_dim,
            para_dim: self.para_dim,
            hash_seed: self.hash_seed,
            embeddings: None,
        }
    }

    /// Feature configuration, loading the embedding file when one is set.
    pub fn feature_config(&self) -> Result<FeatureConfig> {
        let mut config = self.feature_config_without_embeddings();
        if let Some(path) = &self.embeddings {
            config.embeddings = Some(WordEmbeddings::load(path)?);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            topics: self.lda_topics,
            alpha: self.lda_alpha,
            beta: self.lda_beta,
            iterations: self.lda_iterations,
            seed: stage_seed(self.seed, STAGE_LDA),
            vocab_cap: self.lda_vocab_cap,
        }
    }

    pub fn infer_config(&self) -> InferConfig {
        InferConfig {
            iterations: self.infer_iterations,
            burn_in: self.infer_burn_in,
        }
    }

    pub fn classifier_train_config(&self, stage: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: stage_seed(self.seed, stage),
            standardize_stat: self.standardize_stat,
        }
    }

    pub fn crf_train_config(&self, stage: u64) -> CrfTrainConfig {
        CrfTrainConfig {
            epochs: self.crf_epochs,
            learning_rate: self.crf_learning_rate,
            batch_tables: self.crf_batch_tables,
            seed: stage_seed(self.seed, stage),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_file_matches_defaults() {
        let text = include_str!("../../../config/default.conf");
        assert_eq!(PipelineConfig::from_text(text).unwrap(), PipelineConfig::default());
        let keys = |t: &str| -> Vec<String> {
            t.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.split('=').next().unwrap().to_string())
                .collect()
        };
        assert_eq!(keys(text), keys(&PipelineConfig::default().to_text()));
    }

    #[test]
    fn defaults_round_trip_through_text() {
        let config = PipelineConfig::default();
        let text = config.to_text();
        assert!(text.contains("char_alphabet=abcdefghijklmnopqrstuvwxyz0123456789.,-_/\\s\n"));
        assert!(text.contains("learning_rate=0.0001\n"));
        assert!(text.contains("lda_alpha=auto\n"));
        assert_eq!(PipelineConfig::from_text(&text).unwrap(), config);
    }

    #[test]
    fn every_key_is_listed_once() {
        let text = PipelineConfig::default().to_text();
        let mut keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), n);
        let mut probe = PipelineConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            probe.set(k, v).unwrap();
        }
        assert_eq!(probe, PipelineConfig::default());
    }

    #[test]
    fn overrides_comments_and_errors() {
        let c =
            PipelineConfig::from_text("# tuned\n\nepochs = 3\nlda_alpha=0.5\ntrain_crf=false\n")
                .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lda_alpha, Some(0.5));
        assert!(!c.train_crf);
        assert!(matches!(
            PipelineConfig::from_text("epochs=3\nbogus=1\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::from_text("epochs\n"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(PipelineConfig::from_text("epochs=0\n").is_err());
        assert!(PipelineConfig::from_text("dropout=1.0\n").is_err());
        assert!(PipelineConfig::from_text("char_alphabet=aa\n").is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let seeds: Vec<u64> = (1..=8).map(|s| stage_seed(7, s)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        assert_eq!(stage_seed(7, 3), stage_seed(7, 3));
    }
}
