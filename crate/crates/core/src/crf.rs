//! Linear-chain CRF over the column sequence of a table.
//!
//! A type sequence `t` for columns `c_1..c_m` scores
//! `sum_i u[i][t_i] + sum_i P[t_i][t_{i+1}]`, where `u` are log-domain unary
//! potentials from the column classifier and `P` is the learned pairwise
//! matrix between adjacent columns. All dynamic programming runs in log space.

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{CooccurrenceMatrix, TypeId};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{log_sum_exp, Scalar};

/// Largest `|T|^m` the exhaustive oracles accept.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// `m × |T|` log-domain scores, one row per column.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryPotentials<T: Scalar>(Array2<T>);

impl<T: Scalar> UnaryPotentials<T> {
    pub fn new(scores: Array2<T>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "unary matrix must be non-empty".into(),
            ));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "unary potentials must be finite".into(),
            ));
        }
        Ok(UnaryPotentials(scores))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged unary rows".into()));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let scores = Array2::from_shape_vec((rows.len(), n), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(scores)
    }

    pub fn columns(&self) -> usize {
        self.0.nrows()
    }

    pub fn types(&self) -> usize {
        self.0.ncols()
    }

    pub fn scores(&self) -> &Array2<T> {
        &self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.0.row(i)
    }
}

/// `|T| × |T|` coupling weights; `P[a][b]` scores type `a` directly left of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix<T: Scalar>(Array2<T>);

impl<T: Scalar> PairwiseMatrix<T> {
    pub fn new(weights: Array2<T>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "pairwise matrix must be square".into(),
            ));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "pairwise weights must be finite".into(),
            ));
        }
        Ok(PairwiseMatrix(weights))
    }

    pub fn zeros(types: usize) -> Self {
        PairwiseMatrix(Array2::zeros((types, types)))
    }

    pub fn types(&self) -> usize {
        self.0.nrows()
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.0
    }

    pub fn get(&self, a: usize, b: usize) -> T {
        self.0[[a, b]]
    }
}

/// `P[i][j] = scale * ln(1 + counts[i][j])`.
pub fn init_pairwise_from_cooccurrence<T: Scalar>(
    counts: &CooccurrenceMatrix,
    types: usize,
    scale: f64,
) -> Result<PairwiseMatrix<T>> {
    if counts.dim() != types {
        return Err(Error::DimensionMismatch(format!(
            "co-occurrence matrix is {0}x{0}, vocabulary has {types} types",
            counts.dim()
        )));
    }
    let weights = Array2::from_shape_fn((types, types), |(i, j)| {
        T::of(scale * (counts.get(i, j) as f64).ln_1p())
    });
    PairwiseMatrix::new(weights)
}

fn check_dims<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Result<()> {
    if u.types() != p.types() {
        return Err(Error::DimensionMismatch(format!(
            "unaries over {} types, pairwise over {}",
            u.types(),
            p.types()
        )));
    }
    Ok(())
}

/// Unnormalized log score of one type sequence.
pub fn sequence_score<T: Scalar>(
    u: &UnaryPotentials<T>,
    p: &PairwiseMatrix<T>,
    seq: &[usize],
) -> T {
    let mut score = T::zero();
    for (i, &t) in seq.iter().enumerate() {
        score += u.0[[i, t]];
        if i > 0 {
            score += p.0[[seq[i - 1], t]];
        }
    }
    score
}

/// `alpha[i][b]`: log-sum of scores of all prefixes ending with type `b` at column `i`.
fn forward<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Array2<T> {
    let (m, n) = u.0.dim();
    let mut alpha = Array2::zeros((m, n));
    alpha.row_mut(0).assign(&u.0.row(0));
    for i in 1..m {
        for b in 0..n {
            let incoming = (0..n).map(|a| alpha[[i - 1, a]] + p.0[[a, b]]);
            alpha[[i, b]] = u.0[[i, b]] + log_sum_exp(incoming);
        }
    }
    alpha
}

/// `beta[i][a]`: log-sum of scores of all suffixes after column `i` given type `a` there.
fn backward<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Array2<T> {
    let (m, n) = u.0.dim();
    let mut beta = Array2::zeros((m, n));
    for i in (0..m - 1).rev() {
        for a in 0..n {
            let outgoing = (0..n).map(|b| p.0[[a, b]] + u.0[[i + 1, b]] + beta[[i + 1, b]]);
            beta[[i, a]] = log_sum_exp(outgoing);
        }
    }
    beta
}

/// `log Z`, the log-sum over every type sequence of its exponentiated score.
pub fn log_partition<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Result<T> {
    check_dims(u, p)?;
    let alpha = forward(u, p);
    Ok(log_sum_exp(alpha.row(u.columns() - 1).iter().copied()))
}

/// Viterbi MAP sequence. Ties go to the lowest type index at the final
/// column and at every backtrack step.
pub fn map_decode<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Result<Vec<TypeId>> {
    check_dims(u, p)?;
    let (m, n) = u.0.dim();
    let mut delta = u.0.row(0).to_owned();
    let mut back = Array2::<usize>::zeros((m, n));
    let mut next = delta.clone();
    for i in 1..m {
        for b in 0..n {
            let mut best = 0;
            let mut best_score = delta[0] + p.0[[0, b]];
            for a in 1..n {
                let s = delta[a] + p.0[[a, b]];
                if s > best_score {
                    best = a;
                    best_score = s;
                }
            }
            back[[i, b]] = best;
            next[b] = u.0[[i, b]] + best_score;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for b in 1..n {
        if delta[b] > delta[last] {
            last = b;
        }
    }
    let mut path = vec![TypeId(0); m];
    path[m - 1] = TypeId(last);
    for i in (1..m).rev() {
        path[i - 1] = TypeId(back[[i, path[i].0]]);
    }
    Ok(path)
}

/// Exact posterior marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals<T: Scalar> {
    /// `m × |T|`; row `i` is the distribution of column `i`'s type.
    pub node: Array2<T>,
    /// `m - 1` tables of `|T| × |T|`; entry `[a][b]` is `P(t_i = a, t_{i+1} = b)`.
    pub edge: Vec<Array2<T>>,
    pub log_z: T,
}

pub fn marginals<T: Scalar>(u: &UnaryPotentials<T>, p: &PairwiseMatrix<T>) -> Result<Marginals<T>> {
    check_dims(u, p)?;
    let (m, n) = u.0.dim();
    let alpha = forward(u, p);
    let beta = backward(u, p);
    let log_z = log_sum_exp(alpha.row(m - 1).iter().copied());
    let node = Array2::from_shape_fn((m, n), |(i, a)| {
        (alpha[[i, a]] + beta[[i, a]] - log_z).exp()
    });
    let edge = (0..m - 1)
        .map(|i| {
            Array2::from_shape_fn((n, n), |(a, b)| {
                (alpha[[i, a]] + p.0[[a, b]] + u.0[[i + 1, b]] + beta[[i + 1, b]] - log_z).exp()
            })
        })
        .collect();
    Ok(Marginals { node, edge, log_z })
}

fn enumeration_size(m: usize, n: usize) -> Result<u128> {
    let mut total: u128 = 1;
    for _ in 0..m {
        total = total.saturating_mul(n as u128);
        if total > BRUTE_FORCE_LIMIT {
            return Err(Error::InstanceTooLarge(total));
        }
    }
    Ok(total)
}

/// Calls `visit` on every sequence, with the last column as the most
/// significant digit (so sequences arrive in reverse-lexicographic order).
fn enumerate_sequences(m: usize, n: usize, mut visit: impl FnMut(&[usize])) -> Result<()> {
    let total = enumeration_size(m, n)?;
    let mut seq = vec![0usize; m];
    for _ in 0..total {
        visit(&seq);
        for digit in seq.iter_mut() {
            *digit += 1;
            if *digit < n {
                break;
            }
            *digit = 0;
        }
    }
    Ok(())
}

/// Exhaustive `log Z`, for instances with at most [`BRUTE_FORCE_LIMIT`] sequences.
pub fn brute_force_partition<T: Scalar>(
    u: &UnaryPotentials<T>,
    p: &PairwiseMatrix<T>,
) -> Result<T> {
    check_dims(u, p)?;
    let mut scores = Vec::new();
    enumerate_sequences(u.columns(), u.types(), |seq| {
        scores.push(sequence_score(u, p, seq))
    })?;
    Ok(log_sum_exp(scores.iter().copied()))
}

/// Exhaustive argmax. Among exactly tied sequences the reverse-lexicographic
/// minimum wins, which is the sequence Viterbi backtracking selects.
pub fn brute_force_decode<T: Scalar>(
    u: &UnaryPotentials<T>,
    p: &PairwiseMatrix<T>,
) -> Result<Vec<TypeId>> {
    check_dims(u, p)?;
    let mut best: Option<(T, Vec<usize>)> = None;
    enumerate_sequences(u.columns(), u.types(), |seq| {
        let score = sequence_score(u, p, seq);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, seq.to_vec()));
        }
    })?;
    let (_, seq) = best.expect("at least one sequence");
    Ok(seq.into_iter().map(TypeId).collect())
}

/// Frozen unaries of one table with its gold type sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChain<T: Scalar> {
    pub table_id: String,
    pub unaries: UnaryPotentials<T>,
    pub gold: Vec<TypeId>,
}

impl<T: Scalar> LabeledChain<T> {
    /// Fails on a missing label or a label outside the unary width.
    pub fn new(
        table_id: impl Into<String>,
        unaries: UnaryPotentials<T>,
        gold: &[Option<TypeId>],
    ) -> Result<Self> {
        let table_id = table_id.into();
        if gold.len() != unaries.columns() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} columns",
                gold.len(),
                unaries.columns()
            )));
        }
        let gold = gold
            .iter()
            .enumerate()
            .map(|(column, label)| match label {
                Some(t) if t.0 < unaries.types() => Ok(*t),
                Some(t) => Err(Error::InvalidArgument(format!(
                    "label {t} outside vocabulary"
                ))),
                None => Err(Error::UnlabeledColumn {
                    table: table_id.clone(),
                    column,
                }),
            })
            .collect::<Result<_>>()?;
        Ok(LabeledChain {
            table_id,
            unaries,
            gold,
        })
    }
}

fn chain_nll<T: Scalar>(chain: &LabeledChain<T>, p: &PairwiseMatrix<T>) -> Result<(T, Array2<T>)> {
    let n = p.types();
    let marg = marginals(&chain.unaries, p)?;
    let gold: Vec<usize> = chain.gold.iter().map(|t| t.0).collect();
    let nll = marg.log_z - sequence_score(&chain.unaries, p, &gold);
    let mut grad = Array2::zeros((n, n));
    for (i, edge) in marg.edge.iter().enumerate() {
        grad += edge;
        grad[[gold[i], gold[i + 1]]] -= T::one();
    }
    Ok((nll, grad))
}

/// Mean negative log-likelihood of a batch and its gradient with respect to
/// the pairwise matrix (expected minus observed adjacent pair counts).
pub fn nll_and_gradient<T: Scalar>(
    batch: &[LabeledChain<T>],
    p: &PairwiseMatrix<T>,
) -> Result<(T, Array2<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty CRF batch".into()));
    }
    let parts: Vec<(T, Array2<T>)> = batch
        .par_iter()
        .map(|chain| chain_nll(chain, p))
        .collect::<Result<_>>()?;
    let n = p.types();
    let mut nll = T::zero();
    let mut grad = Array2::zeros((n, n));
    for (l, g) in &parts {
        nll += *l;
        grad += g;
    }
    let size = T::of(batch.len() as f64);
    Ok((nll / size, grad.mapv(|g| g / size)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_tables: usize,
    pub seed: u64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            epochs: 15,
            learning_rate: 1e-2,
            batch_tables: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel<T: Scalar> {
    pub pairwise: PairwiseMatrix<T>,
    /// Configuration of the last training run, if any.
    pub train_config: Option<CrfTrainConfig>,
}

impl<T: Scalar> CrfModel<T> {
    pub fn new(pairwise: PairwiseMatrix<T>) -> Self {
        CrfModel {
            pairwise,
            train_config: None,
        }
    }

    pub fn types(&self) -> usize {
        self.pairwise.types()
    }

    pub fn decode(&self, u: &UnaryPotentials<T>) -> Result<Vec<TypeId>> {
        map_decode(u, &self.pairwise)
    }

    pub fn marginals(&self, u: &UnaryPotentials<T>) -> Result<Marginals<T>> {
        marginals(u, &self.pairwise)
    }
}

/// Result of [`train_crf`]: the model and the mean training NLL before
/// training followed by its value after each epoch.
#[derive(Debug, Clone)]
pub struct CrfTraining<T: Scalar> {
    pub model: CrfModel<T>,
    pub loss_trace: Vec<T>,
}

/// Adam on the pairwise matrix over shuffled batches of tables; unaries stay fixed.
pub fn train_crf<T: Scalar>(
    model: &CrfModel<T>,
    chains: &[LabeledChain<T>],
    config: &CrfTrainConfig,
) -> Result<CrfTraining<T>> {
    if config.epochs == 0 || config.batch_tables == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument(
            "invalid CRF training configuration".into(),
        ));
    }
    if chains.is_empty() {
        return Err(Error::InvalidArgument(
            "no tables to train the CRF on".into(),
        ));
    }
    for chain in chains {
        check_dims(&chain.unaries, &model.pairwise)?;
    }
    let n = model.types();
    let mut weights = model.pairwise.0.clone();
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate, 0.0), [n * n]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..chains.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_tables);

    let full_loss = |w: &Array2<T>, epoch: usize| -> Result<T> {
        let (loss, _) = nll_and_gradient(chains, &PairwiseMatrix(w.clone()))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("CRF negative log-likelihood {loss}"),
            });
        }
        Ok(loss)
    };
    let mut trace = vec![full_loss(&weights, 0)?];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_tables) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| chains[i].clone()));
            let (_, grad) = nll_and_gradient(&batch, &PairwiseMatrix(weights.clone()))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: "non-finite CRF gradient".into(),
                });
            }
            let w = weights.as_slice_mut().expect("standard layout");
            let g = grad.as_slice().expect("standard layout");
            adam.step(&mut [w], &[g], &[false])?;
        }
        trace.push(full_loss(&weights, epoch)?);
    }
    Ok(CrfTraining {
        model: CrfModel {
            pairwise: PairwiseMatrix::new(weights)?,
            train_config: Some(*config),
        },
        loss_trace: trace,
    })
}

/// Per-column argmax of the unaries alone.
pub fn independent_decode<T: Scalar>(u: &UnaryPotentials<T>) -> Vec<TypeId> {
    u.0.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (b, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = b;
                }
            }
            TypeId(best)
        })
        .collect()
}
