//! Per-column feature extraction in four groups: character distributions,
//! hashed word vectors, a hashed whole-column n-gram vector and 27 global
//! statistics.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::corpus::Column;
use crate::error::{Error, Result};

pub const STAT_DIM: usize = 27;

/// Names of the statistics block, in emission order.
pub const STAT_NAMES: [&str; STAT_DIM] = [
    "numeric_fraction",
    "numeric_mean",
    "numeric_std",
    "numeric_min",
    "numeric_max",
    "numeric_median",
    "length_mean",
    "length_std",
    "length_min",
    "length_max",
    "tokens_mean",
    "tokens_std",
    "empty_fraction",
    "unique_fraction",
    "value_entropy",
    "has_digit_fraction",
    "has_alpha_fraction",
    "has_punct_fraction",
    "has_space_fraction",
    "digits_mean",
    "digits_std",
    "all_upper_fraction",
    "capitalized_fraction",
    "leading_digit_mean",
    "numeric_skew",
    "log_rows",
    "modal_fraction",
];

const SKEW_EPS: f64 = 1e-9;
const WORD_SALT: u8 = 1;
const BIGRAM_SALT: u8 = 2;
const TRIGRAM_SALT: u8 = 3;

/// Feature groups a classifier consumes. `Topic` is the table-level group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureGroup {
    Char,
    Word,
    Para,
    Stat,
    Topic,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Char,
        FeatureGroup::Word,
        FeatureGroup::Para,
        FeatureGroup::Stat,
        FeatureGroup::Topic,
    ];
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FeatureGroup::Char => "char",
            FeatureGroup::Word => "word",
            FeatureGroup::Para => "para",
            FeatureGroup::Stat => "stat",
            FeatureGroup::Topic => "topic",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(FeatureGroup::Char),
            "word" => Ok(FeatureGroup::Word),
            "para" => Ok(FeatureGroup::Para),
            "stat" => Ok(FeatureGroup::Stat),
            "topic" => Ok(FeatureGroup::Topic),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature group {other:?}"
            ))),
        }
    }
}

/// Pre-trained token vectors that replace hashed word features.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl WordEmbeddings {
    pub fn new(dim: usize, tokens: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != tokens.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens with {} values at dim {dim}",
                tokens.len(),
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding contains non-finite values".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            index.entry(token.clone()).or_insert(i);
        }
        Ok(WordEmbeddings {
            dim,
            tokens,
            vectors,
            index,
        })
    }

    /// Text format: one `token v1 v2 ... vd` entry per line, space-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = 0;
        let mut tokens = Vec::new();
        let mut vectors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config {
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            if dim == 0 {
                dim = values.len();
            }
            if values.len() != dim || dim == 0 {
                return Err(Error::Config {
                    line: lineno + 1,
                    reason: format!("expected {dim} values, found {}", values.len()),
                });
            }
            tokens.push(token.to_lowercase());
            vectors.extend(values);
        }
        Self::new(dim, tokens, vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub char_alphabet: Vec<char>,
    pub word_dim: usize,
    pub para_dim: usize,
    pub hash_seed: u64,
    pub embeddings: Option<WordEmbeddings>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            char_alphabet: default_alphabet(),
            word_dim: 128,
            para_dim: 128,
            hash_seed: 42,
            embeddings: None,
        }
    }
}

/// Lowercase ASCII letters, digits and `.,-_/ `.
pub fn default_alphabet() -> Vec<char> {
    ('a'..='z')
        .chain('0'..='9')
        .chain(".,-_/ ".chars())
        .collect()
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.char_alphabet.is_empty() {
            return Err(Error::InvalidArgument("character alphabet is empty".into()));
        }
        let mut sorted = self.char_alphabet.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.char_alphabet.len() {
            return Err(Error::InvalidArgument(
                "character alphabet has duplicates".into(),
            ));
        }
        if self.word_dim == 0 || self.para_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn char_dim(&self) -> usize {
        2 * self.char_alphabet.len()
    }

    /// Effective word dimension; the embedding width when embeddings are loaded.
    pub fn effective_word_dim(&self) -> usize {
        self.embeddings
            .as_ref()
            .map_or(self.word_dim, WordEmbeddings::dim)
    }

    pub fn total_dim(&self) -> usize {
        self.char_dim() + self.effective_word_dim() + self.para_dim + STAT_DIM
    }
}

/// The four feature groups of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFeatures {
    pub char: Vec<f64>,
    pub word: Vec<f64>,
    pub para: Vec<f64>,
    pub stat: Vec<f64>,
}

impl ColumnFeatures {
    pub fn total_dim(&self) -> usize {
        self.char.len() + self.word.len() + self.para.len() + self.stat.len()
    }

    /// Borrow a column-level group; `None` for the table-level topic group.
    pub fn group(&self, group: FeatureGroup) -> Option<&[f64]> {
        match group {
            FeatureGroup::Char => Some(&self.char),
            FeatureGroup::Word => Some(&self.word),
            FeatureGroup::Para => Some(&self.para),
            FeatureGroup::Stat => Some(&self.stat),
            FeatureGroup::Topic => None,
        }
    }

    pub fn group_mut(&mut self, group: FeatureGroup) -> Option<&mut Vec<f64>> {
        match group {
            FeatureGroup::Char => Some(&mut self.char),
            FeatureGroup::Word => Some(&mut self.word),
            FeatureGroup::Para => Some(&mut self.para),
            FeatureGroup::Stat => Some(&mut self.stat),
            FeatureGroup::Topic => None,
        }
    }
}

/// Lowercased alphanumeric runs; every other character separates tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Seeded 64-bit FNV-1a over `seed (LE) || salt || bytes`, finished with the
/// splitmix64 mixer.
pub fn feature_hash(seed: u64, salt: u8, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in seed
        .to_le_bytes()
        .iter()
        .chain(std::iter::once(&salt))
        .chain(bytes)
    {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn hashed_add(out: &mut [f64], seed: u64, salt: u8, key: &str) {
    let h = feature_hash(seed, salt, key.as_bytes());
    let bucket = (h % out.len() as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    out[bucket] += sign;
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Population mean and standard deviation.
fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in values {
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    if n == 0.0 {
        (0.0, 0.0)
    } else {
        (mean, (m2 / n).max(0.0).sqrt())
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

fn parse_numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn leading_digit(cell: &str) -> Option<f64> {
    cell.chars()
        .find(|c| ('1'..='9').contains(c))
        .and_then(|c| c.to_digit(10))
        .map(f64::from)
}

/// The 27 column statistics named in [`STAT_NAMES`]. Degenerate values
/// (no numeric cells, overflow) are reported as 0.
pub fn stat_features(column: &Column) -> Vec<f64> {
    let cells = &column.cells;
    let n = cells.len().max(1) as f64;
    let fraction =
        |pred: &dyn Fn(&str) -> bool| cells.iter().filter(|c| pred(c)).count() as f64 / n;

    let mut numeric: Vec<f64> = Vec::new();
    let mut leading = Vec::new();
    for cell in cells {
        if let Some(v) = parse_numeric(cell) {
            numeric.push(v);
            if let Some(d) = leading_digit(cell) {
                leading.push(d);
            }
        }
    }
    numeric.sort_by(f64::total_cmp);
    let (num_mean, num_std) = mean_std(numeric.iter().copied());
    let num_min = numeric.first().copied().unwrap_or(0.0);
    let num_max = numeric.last().copied().unwrap_or(0.0);
    let num_median = median(&numeric);
    let skew = if numeric.is_empty() {
        0.0
    } else {
        (num_mean - num_median) / (num_std + SKEW_EPS)
    };

    let lengths: Vec<f64> = cells.iter().map(|c| c.chars().count() as f64).collect();
    let (len_mean, len_std) = mean_std(lengths.iter().copied());
    let len_min = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let len_max = lengths.iter().copied().fold(0.0, f64::max);
    let (tok_mean, tok_std) = mean_std(cells.iter().map(|c| tokenize(c).count() as f64));
    let (dig_mean, dig_std) = mean_std(
        cells
            .iter()
            .map(|c| c.chars().filter(char::is_ascii_digit).count() as f64),
    );

    let mut histogram: HashMap<&str, usize> = HashMap::new();
    for cell in cells {
        *histogram.entry(cell.as_str()).or_default() += 1;
    }
    let mut counts: Vec<usize> = histogram.values().copied().collect();
    counts.sort_unstable();
    let entropy = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0);
    let modal = counts.last().copied().unwrap_or(0) as f64 / n;

    let all_upper =
        |c: &str| c.chars().any(char::is_alphabetic) && !c.chars().any(char::is_lowercase);
    let capitalized = |c: &str| c.chars().next().is_some_and(char::is_uppercase);
    let punct = |c: &str| {
        c.chars()
            .any(|ch| !ch.is_alphanumeric() && !ch.is_whitespace())
    };

    let stats = [
        numeric.len() as f64 / n,
        num_mean,
        num_std,
        num_min,
        num_max,
        num_median,
        len_mean,
        len_std,
        if len_min.is_finite() { len_min } else { 0.0 },
        len_max,
        tok_mean,
        tok_std,
        fraction(&|c| c.is_empty()),
        histogram.len() as f64 / n,
        entropy,
        fraction(&|c| c.chars().any(|ch| ch.is_ascii_digit())),
        fraction(&|c| c.chars().any(char::is_alphabetic)),
        fraction(&punct),
        fraction(&|c| c.chars().any(char::is_whitespace)),
        dig_mean,
        dig_std,
        fraction(&all_upper),
        fraction(&capitalized),
        mean_std(leading.iter().copied()).0,
        skew,
        (cells.len() as f64).ln_1p(),
        modal,
    ];
    stats
        .iter()
        .map(|v| if v.is_finite() { *v } else { 0.0 })
        .collect()
}

/// Mean and population std over cells of each alphabet character's share of
/// the (lowercased) cell; means first, then stds.
pub fn char_features(column: &Column, config: &FeatureConfig) -> Vec<f64> {
    let k = config.char_alphabet.len();
    let position: HashMap<char, usize> = config
        .char_alphabet
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let mut per_cell = vec![0.0; k];
    let mut sums = vec![0.0; k];
    let mut sq_sums = vec![0.0; k];
    for cell in &column.cells {
        per_cell.iter_mut().for_each(|v| *v = 0.0);
        let mut len = 0usize;
        for ch in cell.chars().flat_map(char::to_lowercase) {
            len += 1;
            if let Some(&i) = position.get(&ch) {
                per_cell[i] += 1.0;
            }
        }
        if len > 0 {
            for i in 0..k {
                let f = per_cell[i] / len as f64;
                sums[i] += f;
                sq_sums[i] += f * f;
            }
        }
    }
    let n = column.cells.len().max(1) as f64;
    let mut out = Vec::with_capacity(2 * k);
    out.extend(sums.iter().map(|s| s / n));
    out.extend(
        sums.iter()
            .zip(&sq_sums)
            .map(|(s, sq)| (sq / n - (s / n).powi(2)).max(0.0).sqrt()),
    );
    out
}

/// L2-normalized mean of per-token vectors: signed one-hot hash buckets, or
/// loaded embeddings when the config carries them (unknown tokens skipped).
pub fn word_features(column: &Column, config: &FeatureConfig) -> Vec<f64> {
    let dim = config.effective_word_dim();
    let mut out = vec![0.0; dim];
    let mut count = 0usize;
    for token in column.cells.iter().flat_map(|c| tokenize(c)) {
        match &config.embeddings {
            Some(emb) => {
                if let Some(vector) = emb.get(&token) {
                    out.iter_mut().zip(vector).for_each(|(o, v)| *o += v);
                    count += 1;
                }
            }
            None => {
                hashed_add(&mut out, config.hash_seed, WORD_SALT, &token);
                count += 1;
            }
        }
    }
    if count > 0 {
        out.iter_mut().for_each(|v| *v /= count as f64);
    }
    l2_normalize(&mut out);
    out
}

/// Hashed bag of within-cell token bigrams and boundary-marked character
/// trigrams of every token, L2-normalized.
pub fn para_features(column: &Column, config: &FeatureConfig) -> Vec<f64> {
    let mut out = vec![0.0; config.para_dim];
    for cell in &column.cells {
        let tokens: Vec<String> = tokenize(cell).collect();
        for pair in tokens.windows(2) {
            let key = format!("{} {}", pair[0], pair[1]);
            hashed_add(&mut out, config.hash_seed, BIGRAM_SALT, &key);
        }
        for token in &tokens {
            let marked: Vec<char> = std::iter::once('<')
                .chain(token.chars())
                .chain(std::iter::once('>'))
                .collect();
            for tri in marked.windows(3) {
                let key: String = tri.iter().collect();
                hashed_add(&mut out, config.hash_seed, TRIGRAM_SALT, &key);
            }
        }
    }
    l2_normalize(&mut out);
    out
}

pub fn featurize_column(column: &Column, config: &FeatureConfig) -> ColumnFeatures {
    ColumnFeatures {
        char: char_features(column, config),
        word: word_features(column, config),
        para: para_features(column, config),
        stat: stat_features(column),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(cells: &[&str]) -> Column {
        Column::new("", cells.iter().map(|c| c.to_string()).collect())
    }

    fn stat(column: &Column, name: &str) -> f64 {
        let i = STAT_NAMES.iter().position(|n| *n == name).unwrap();
        stat_features(column)[i]
    }

    fn ab_config() -> FeatureConfig {
        FeatureConfig {
            char_alphabet: vec!['a', 'b'],
            word_dim: 16,
            para_dim: 16,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn numeric_stats() {
        let c = col(&["1", "2", "3"]);
        assert_eq!(stat(&c, "numeric_fraction"), 1.0);
        assert_eq!(stat(&c, "numeric_mean"), 2.0);
        assert!((stat(&c, "numeric_std") - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(stat(&c, "numeric_median"), 2.0);
        assert_eq!(stat(&c, "leading_digit_mean"), 2.0);

        let c = col(&["10", "20", "abc"]);
        assert!((stat(&c, "numeric_fraction") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(stat(&c, "numeric_mean"), 15.0);
    }

    #[test]
    fn constant_column_stats() {
        let c = col(&["a", "a", "a"]);
        assert!((stat(&c, "unique_fraction") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(stat(&c, "modal_fraction"), 1.0);
        assert_eq!(stat(&c, "value_entropy"), 0.0);
        assert_eq!(stat(&c, "numeric_fraction"), 0.0);
        assert_eq!(stat(&c, "numeric_mean"), 0.0);
    }

    #[test]
    fn stat_block_has_27_entries() {
        assert_eq!(stat_features(&col(&["x"])).len(), STAT_DIM);
        assert_eq!(STAT_NAMES.len(), 27);
    }

    #[test]
    fn huge_numbers_stay_finite() {
        let c = col(&["1e308", "1.7e308", "-1e308"]);
        assert!(stat_features(&c).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn char_examples() {
        let cfg = ab_config();
        assert_eq!(char_features(&col(&["aa"]), &cfg), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            char_features(&col(&["ab", "ba"]), &cfg),
            vec![0.5, 0.5, 0.0, 0.0]
        );
        assert_eq!(
            char_features(&col(&["a", "b"]), &cfg),
            vec![0.5, 0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn default_dimensions() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.char_alphabet.len(), 42);
        let f = featurize_column(&col(&["Paris", "Lyon"]), &cfg);
        assert_eq!(f.char.len(), cfg.char_dim());
        assert_eq!(f.total_dim(), 2 * 42 + 128 + 128 + 27);
        assert_eq!(f.total_dim(), cfg.total_dim());
    }

    #[test]
    fn word_single_token_column() {
        let cfg = ab_config();
        let single = word_features(&col(&["Paris"]), &cfg);
        let repeated = word_features(&col(&["paris", "PARIS", "Paris"]), &cfg);
        assert_eq!(single, repeated);
        let norm: f64 = single.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(single.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn token_free_columns_are_zero() {
        let cfg = ab_config();
        let c = col(&["!!!", "---"]);
        assert!(word_features(&c, &cfg).iter().all(|v| *v == 0.0));
        assert!(para_features(&c, &cfg).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hashing_is_seeded() {
        assert_eq!(feature_hash(42, 1, b"city"), feature_hash(42, 1, b"city"));
        assert_ne!(feature_hash(42, 1, b"city"), feature_hash(43, 1, b"city"));
        assert_ne!(feature_hash(42, 1, b"city"), feature_hash(42, 2, b"city"));
    }

    #[test]
    fn embeddings_replace_hashing() {
        let emb = WordEmbeddings::parse("paris 1 0\nlyon 0 1\n").unwrap();
        let cfg = FeatureConfig {
            embeddings: Some(emb),
            ..ab_config()
        };
        assert_eq!(cfg.effective_word_dim(), 2);
        let v = word_features(&col(&["Paris", "Lyon", "unknown"]), &cfg);
        let h = 0.5f64.sqrt();
        assert!((v[0] - h).abs() < 1e-12 && (v[1] - h).abs() < 1e-12);
        assert!(WordEmbeddings::parse("a 1 2\nb 1\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::default().validate().is_ok());
        let dup = FeatureConfig {
            char_alphabet: vec!['a', 'a'],
            ..FeatureConfig::default()
        };
        assert!(dup.validate().is_err());
        let zero = FeatureConfig {
            word_dim: 0,
            ..FeatureConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    proptest! {
        #[test]
        fn features_finite_and_normalized(cells in prop::collection::vec(any::<String>(), 1..8)) {
            let c = Column::new("", cells);
            let f = featurize_column(&c, &FeatureConfig::default());
            for v in f.char.iter().chain(&f.word).chain(&f.para).chain(&f.stat) {
                prop_assert!(v.is_finite());
            }
            for group in [&f.word, &f.para] {
                let n = norm(group);
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn features_invariant_under_cell_permutation(
            cells in prop::collection::vec("[a-zA-Z0-9 .,-]{0,12}", 1..8),
            rotate in 0usize..8,
        ) {
            let cfg = FeatureConfig::default();
            let mut shuffled = cells.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rotate % len);
            shuffled.reverse();
            let a = featurize_column(&Column::new("", cells), &cfg);
            let b = featurize_column(&Column::new("", shuffled), &cfg);
            for (x, y) in a.char.iter().chain(&a.word).chain(&a.para).chain(&a.stat)
                .zip(b.char.iter().chain(&b.word).chain(&b.para).chain(&b.stat))
            {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn featurization_is_pure(cells in prop::collection::vec(".{0,10}", 1..5)) {
            let c = Column::new("", cells);
            let cfg = FeatureConfig::default();
            prop_assert_eq!(featurize_column(&c, &cfg), featurize_column(&c, &cfg));
        }
    }
}
