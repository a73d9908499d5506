//! Table-intent estimation: an LDA topic model over tables-as-documents,
//! trained by collapsed Gibbs sampling, and topic saliency ranking.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Table;
use crate::error::{Error, Result};

/// Probability distribution over topics for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicVector(Vec<f64>);

impl TopicVector {
    pub fn uniform(k: usize) -> Self {
        TopicVector(vec![1.0 / k as f64; k])
    }

    /// Accepts a vector on the probability simplex (sum 1 within 1e-9).
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let sum: f64 = theta.iter().sum();
        if theta.is_empty() || theta.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "topic vector must be a probability distribution".into(),
            ));
        }
        Ok(TopicVector(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Cell tokens of every column in column-major order, lowercased and split on
/// whitespace. Headers are never part of the document.
pub fn table_to_document(table: &Table) -> Vec<String> {
    table
        .columns
        .iter()
        .flat_map(|c| &c.cells)
        .flat_map(|cell| cell.split_whitespace())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub vocab_cap: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 20,
            alpha: None,
            beta: 0.01,
            iterations: 200,
            seed: 0,
            vocab_cap: 50_000,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            iterations: 50,
            burn_in: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    topics: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// `topics × vocab` row-major word probabilities.
    topic_word: Vec<f64>,
    alpha: f64,
    beta: f64,
    iterations: usize,
    seed: u64,
}

impl LdaModel {
    /// Rebuilds a model from stored parts, validating the distributions.
    pub fn from_parts(
        topics: usize,
        vocab: Vec<String>,
        topic_word: Vec<f64>,
        alpha: f64,
        beta: f64,
        iterations: usize,
        seed: u64,
    ) -> Result<Self> {
        if topics < 2 || vocab.is_empty() || topic_word.len() != topics * vocab.len() {
            return Err(Error::DimensionMismatch(format!(
                "{topics} topics, {} words, {} weights",
                vocab.len(),
                topic_word.len()
            )));
        }
        for row in topic_word.chunks(vocab.len()) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(
                    "topic row is not a distribution".into(),
                ));
            }
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(LdaModel {
            topics,
            vocab,
            index,
            topic_word,
            alpha,
            beta,
            iterations,
            seed,
        })
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn topic_word(&self) -> &[f64] {
        &self.topic_word
    }

    pub fn topic_row(&self, topic: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.topic_word[topic * v..(topic + 1) * v]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices of the `n` most probable words of a topic, ties by word id.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<usize> {
        let row = self.topic_row(topic);
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampler state. `train_lda` drives it to completion; tests
/// and diagnostics can step it and take snapshots.
pub struct LdaTrainer {
    config: LdaConfig,
    alpha: f64,
    vocab: Vec<String>,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    sweeps: usize,
    scratch: Vec<f64>,
}

impl LdaTrainer {
    pub fn new(docs: &[Vec<String>], config: LdaConfig) -> Result<Self> {
        if config.topics < 2 {
            return Err(Error::InvalidArgument("LDA needs at least 2 topics".into()));
        }
        if docs.is_empty() {
            return Err(Error::InvalidArgument(
                "LDA needs at least one document".into(),
            ));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for token in docs.iter().flatten() {
            *freq.entry(token.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(config.vocab_cap);
        if ranked.is_empty() {
            return Err(Error::EmptyVocabulary("LDA corpus has no tokens".into()));
        }
        let vocab: Vec<String> = ranked.iter().map(|(w, _)| (*w).to_owned()).collect();
        let index: HashMap<&str, usize> = ranked
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (*w, i))
            .collect();
        let encoded: Vec<Vec<usize>> = docs
            .iter()
            .map(|d| {
                d.iter()
                    .filter_map(|t| index.get(t.as_str()).copied())
                    .collect()
            })
            .collect();

        let k = config.topics;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut doc_topic = vec![vec![0u32; k]; encoded.len()];
        let mut topic_word = vec![0u32; k * v];
        let mut topic_total = vec![0u32; k];
        let assignments: Vec<Vec<usize>> = encoded
            .iter()
            .enumerate()
            .map(|(d, words)| {
                words
                    .iter()
                    .map(|&w| {
                        let z = rng.random_range(0..k);
                        doc_topic[d][z] += 1;
                        topic_word[z * v + w] += 1;
                        topic_total[z] += 1;
                        z
                    })
                    .collect()
            })
            .collect();
        Ok(LdaTrainer {
            alpha: config.alpha(),
            config,
            vocab,
            docs: encoded,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            sweeps: 0,
            scratch: vec![0.0; k],
        })
    }

    /// One full Gibbs sweep over every token.
    pub fn step(&mut self) {
        let k = self.config.topics;
        let v = self.vocab.len();
        let beta = self.config.beta;
        let v_beta = v as f64 * beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.doc_topic[d][old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;
                for t in 0..k {
                    self.scratch[t] = (f64::from(self.doc_topic[d][t]) + self.alpha)
                        * (f64::from(self.topic_word[t * v + w]) + beta)
                        / (f64::from(self.topic_total[t]) + v_beta);
                }
                let new = sample_index(&mut self.rng, &self.scratch);
                self.assignments[d][i] = new;
                self.doc_topic[d][new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// In-vocabulary token count of the training corpus.
    pub fn token_count(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Sum of the per-topic assignment totals; equals [`token_count`](Self::token_count).
    pub fn assigned_count(&self) -> usize {
        self.topic_total.iter().map(|&c| c as usize).sum()
    }

    pub fn model(&self) -> LdaModel {
        let k = self.config.topics;
        let v = self.vocab.len();
        let beta = self.config.beta;
        let mut topic_word = Vec::with_capacity(k * v);
        for t in 0..k {
            let denom = f64::from(self.topic_total[t]) + v as f64 * beta;
            topic_word.extend(
                self.topic_word[t * v..(t + 1) * v]
                    .iter()
                    .map(|&c| (f64::from(c) + beta) / denom),
            );
        }
        let index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        LdaModel {
            topics: k,
            vocab: self.vocab.clone(),
            index,
            topic_word,
            alpha: self.alpha,
            beta,
            iterations: self.sweeps,
            seed: self.config.seed,
        }
    }
}

/// Trains an LDA model on token documents with `config.iterations` sweeps.
pub fn train_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<LdaModel> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument(
            "LDA needs at least one iteration".into(),
        ));
    }
    let mut trainer = LdaTrainer::new(docs, config.clone())?;
    for _ in 0..config.iterations {
        trainer.step();
    }
    debug_assert_eq!(trainer.assigned_count(), trainer.token_count());
    Ok(trainer.model())
}

/// Topic proportions of a document with the topic-word distributions held
/// fixed. Averages the smoothed proportions over post-burn-in sweeps;
/// out-of-vocabulary tokens are dropped and an empty document gets the
/// uniform vector.
pub fn infer_topics(
    model: &LdaModel,
    doc: &[String],
    config: InferConfig,
    seed: u64,
) -> TopicVector {
    let k = model.topics;
    let words: Vec<usize> = doc.iter().filter_map(|t| model.word_id(t)).collect();
    if words.is_empty() {
        return TopicVector::uniform(k);
    }
    let v = model.vocab.len();
    let alpha = model.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = words
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();
    let mut weights = vec![0.0; k];
    let mut theta = vec![0.0; k];
    let mut samples = 0usize;
    let norm = words.len() as f64 + k as f64 * alpha;
    for sweep in 0..config.iterations {
        for (i, &w) in words.iter().enumerate() {
            counts[z[i]] -= 1;
            for t in 0..k {
                weights[t] = (f64::from(counts[t]) + alpha) * model.topic_word[t * v + w];
            }
            z[i] = sample_index(&mut rng, &weights);
            counts[z[i]] += 1;
        }
        if sweep >= config.burn_in {
            samples += 1;
            for t in 0..k {
                theta[t] += (f64::from(counts[t]) + alpha) / norm;
            }
        }
    }
    if samples == 0 {
        for t in 0..k {
            theta[t] = (f64::from(counts[t]) + alpha) / norm;
        }
    } else {
        theta.iter_mut().for_each(|p| *p /= samples as f64);
    }
    let sum: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|p| *p /= sum);
    TopicVector(theta)
}

/// Seed used for the `index`-th document of a batch inference call.
pub fn document_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Topic vectors for many tables, in parallel and deterministic under `seed`.
pub fn infer_tables(
    model: &LdaModel,
    tables: &[Table],
    config: InferConfig,
    seed: u64,
) -> Vec<TopicVector> {
    tables
        .par_iter()
        .enumerate()
        .map(|(i, t)| infer_topics(model, &table_to_document(t), config, document_seed(seed, i)))
        .collect()
}

/// Mean per-token log-likelihood of documents under the model, with each
/// document's proportions estimated by [`infer_topics`].
pub fn log_likelihood(
    model: &LdaModel,
    docs: &[Vec<String>],
    config: InferConfig,
    seed: u64,
) -> f64 {
    let v = model.vocab.len();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for (d, doc) in docs.iter().enumerate() {
        let theta = infer_topics(model, doc, config, document_seed(seed, d));
        for w in doc.iter().filter_map(|t| model.word_id(t)) {
            let p: f64 = (0..model.topics)
                .map(|t| theta.0[t] * model.topic_word[t * v + w])
                .sum();
            total += p.ln();
            tokens += 1;
        }
    }
    if tokens == 0 {
        0.0
    } else {
        total / tokens as f64
    }
}

/// Average topic vector of the tables containing each type; all zeros for a
/// type no table contains.
pub fn type_topic_means(
    tables: &[Table],
    topics: &[TopicVector],
    type_count: usize,
) -> Vec<Vec<f64>> {
    let k = topics.first().map_or(0, TopicVector::len);
    let mut sums = vec![vec![0.0; k]; type_count];
    let mut counts = vec![0usize; type_count];
    let mut seen = vec![false; type_count];
    for (table, theta) in tables.iter().zip(topics) {
        seen.iter_mut().for_each(|s| *s = false);
        for label in table.columns.iter().filter_map(|c| c.label) {
            seen[label.0] = true;
        }
        for ty in (0..type_count).filter(|&t| seen[t]) {
            counts[ty] += 1;
            sums[ty]
                .iter_mut()
                .zip(theta.as_slice())
                .for_each(|(s, p)| *s += p);
        }
    }
    for (sum, n) in sums.iter_mut().zip(counts) {
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSaliency {
    pub topic: usize,
    pub score: f64,
    /// Type indices with the highest probability for this topic, best first.
    pub top_types: Vec<usize>,
}

/// Ranks topics by the mean probability of their `k` most associated types.
/// `type_topic_means[type][topic]`; `k` is clamped to the type count. Ties
/// rank by topic index.
pub fn topic_saliency(type_topic_means: &[Vec<f64>], k: usize) -> Vec<TopicSaliency> {
    let types = type_topic_means.len();
    let topics = type_topic_means.first().map_or(0, Vec::len);
    let k = k.min(types);
    let mut out: Vec<TopicSaliency> = (0..topics)
        .map(|topic| {
            let mut order: Vec<usize> = (0..types).collect();
            order.sort_by(|&a, &b| {
                type_topic_means[b][topic]
                    .total_cmp(&type_topic_means[a][topic])
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            let score = if k == 0 {
                0.0
            } else {
                order
                    .iter()
                    .map(|&t| type_topic_means[t][topic])
                    .sum::<f64>()
                    / k as f64
            };
            TopicSaliency {
                topic,
                score,
                top_types: order,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.topic.cmp(&b.topic))
    });
    out
}

/// Saliency rows as `topic_id\tscore\ttype1,type2,...` lines.
pub fn saliency_tsv(rows: &[TopicSaliency], type_names: &[String]) -> String {
    let mut out = String::new();
    for row in rows {
        let names: Vec<&str> = row
            .top_types
            .iter()
            .map(|&t| type_names[t].as_str())
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            row.topic,
            row.score,
            names.join(",")
        ));
    }
    out
}
