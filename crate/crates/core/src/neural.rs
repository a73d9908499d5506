//! The single-column classifier.
//!
//! Char, word and para features (and, for the topic-aware variant, the table
//! topic vector) each pass through a `dense -> activation -> dense`
//! subnetwork. Their outputs are concatenated with the statistics block and
//! fed to the primary network: two `dense -> batch-norm -> activation ->
//! dropout` blocks and a softmax output layer over the type vocabulary.
//!
//! Backpropagation is written out by hand for these layers only.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TypeId;
use crate::error::{Error, Result};
use crate::featurizer::{ColumnFeatures, FeatureConfig, STAT_DIM};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::topics::TopicVector;

pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const BATCH_NORM_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Makes the whole network affine; used to check gradients in closed form.
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: &Array2<T>) -> Array2<T> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(T::zero())),
            Activation::Identity => x.clone(),
        }
    }

    fn backward<T: Scalar>(self, pre: &Array2<T>, grad: Array2<T>) -> Array2<T> {
        match self {
            Activation::Relu => {
                let mut grad = grad;
                grad.zip_mut_with(pre, |g, &p| {
                    if p <= T::zero() {
                        *g = T::zero();
                    }
                });
                grad
            }
            Activation::Identity => grad,
        }
    }
}

/// Widths of the input groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDims {
    pub char: usize,
    pub word: usize,
    pub para: usize,
    pub stat: usize,
    /// Topic count `K` for the topic-aware variant.
    pub topic: Option<usize>,
}

impl InputDims {
    pub fn from_features(config: &FeatureConfig, topic: Option<usize>) -> Self {
        InputDims {
            char: config.char_dim(),
            word: config.effective_word_dim(),
            para: config.para_dim,
            stat: STAT_DIM,
            topic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub inputs: InputDims,
    pub subnet_hidden: usize,
    pub subnet_out: usize,
    pub primary_hidden: usize,
    pub dropout_rate: f64,
    pub type_count: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl NetworkConfig {
    /// Default widths: subnetworks 64 -> 32, primary layers 128, dropout 0.3.
    pub fn new(inputs: InputDims, type_count: usize) -> Self {
        NetworkConfig {
            inputs,
            subnet_hidden: 64,
            subnet_out: 32,
            primary_hidden: 128,
            dropout_rate: 0.3,
            type_count,
            seed: 0,
            activation: Activation::Relu,
        }
    }

    pub fn use_topic(&self) -> bool {
        self.inputs.topic.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.inputs;
        let widths = [
            self.subnet_hidden,
            self.subnet_out,
            self.primary_hidden,
            self.type_count,
            i.char,
            i.word,
            i.para,
            i.topic.unwrap_or(1),
        ];
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "network widths must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(
                "dropout rate must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn primary_input(&self) -> usize {
        let subnets = 3 + usize::from(self.use_topic());
        subnets * self.subnet_out + self.inputs.stat
    }
}

/// Fully connected layer `y = x W + b`, `W` stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| {
                T::of(rng.random_range(-limit..limit))
            }),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    fn backward(&self, x: &ArrayView2<T>, dy: &Array2<T>, grad: &mut Dense<T>) -> Array2<T> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

#[derive(Debug, Clone)]
struct BatchNormCache<T: Scalar> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    batch_stats: bool,
    mean: Array1<T>,
    var: Array1<T>,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    fn zeros_like(&self) -> Self {
        let w = self.gamma.len();
        BatchNorm {
            gamma: Array1::zeros(w),
            beta: Array1::zeros(w),
            running_mean: Array1::zeros(w),
            running_var: Array1::zeros(w),
        }
    }

    fn forward(&self, x: &Array2<T>, batch_stats: bool) -> (Array2<T>, BatchNormCache<T>) {
        let eps = T::of(BATCH_NORM_EPSILON);
        let (mean, var) = if batch_stats {
            let n = T::of(x.nrows() as f64);
            let mean = x.sum_axis(Axis(0)) / n;
            let centered = x - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_stats,
                mean,
                var,
            },
        )
    }

    fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Array2<T>,
        grad: &mut BatchNorm<T>,
    ) -> Array2<T> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        if !cache.batch_stats {
            return dxhat * &cache.inv_std;
        }
        let n = T::of(dy.nrows() as f64);
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let scaled = &dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        scaled * &(&cache.inv_std / n)
    }

    /// Exponential moving average of batch statistics; variance is unbiased.
    fn update_running(&mut self, cache: &BatchNormCache<T>, rows: usize) {
        let momentum = T::of(BATCH_NORM_MOMENTUM);
        let keep = T::one() - momentum;
        let correction = if rows > 1 {
            T::of(rows as f64 / (rows - 1) as f64)
        } else {
            T::one()
        };
        self.running_mean = &self.running_mean * keep + &cache.mean * momentum;
        self.running_var = &self.running_var * keep + &cache.var * (momentum * correction);
    }
}

/// `dense -> activation -> dense`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet<T: Scalar> {
    pub hidden: Dense<T>,
    pub out: Dense<T>,
}

#[derive(Debug, Clone)]
struct SubnetCache<T: Scalar> {
    pre: Array2<T>,
    act: Array2<T>,
}

impl<T: Scalar> Subnet<T> {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, out: usize) -> Self {
        Subnet {
            hidden: Dense::init(rng, input, hidden),
            out: Dense::init(rng, hidden, out),
        }
    }

    fn zeros_like(&self) -> Self {
        Subnet {
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    fn forward(&self, x: &Array2<T>, activation: Activation) -> (Array2<T>, SubnetCache<T>) {
        let pre = self.hidden.forward(&x.view());
        let act = activation.apply(&pre);
        let out = self.out.forward(&act.view());
        (out, SubnetCache { pre, act })
    }

    fn backward(
        &self,
        x: &Array2<T>,
        cache: &SubnetCache<T>,
        dy: &Array2<T>,
        activation: Activation,
        grad: &mut Subnet<T>,
    ) {
        let dact = self.out.backward(&cache.act.view(), dy, &mut grad.out);
        let dpre = activation.backward(&cache.pre, dact);
        self.hidden.backward(&x.view(), &dpre, &mut grad.hidden);
    }
}

/// One column's inputs: its features and, for the topic-aware model, its
/// table's topic vector.
#[derive(Debug, Clone, Copy)]
pub struct ColumnInput<'a> {
    pub features: &'a ColumnFeatures,
    pub topic: Option<&'a TopicVector>,
}

/// Row-stacked inputs for a batch of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<T: Scalar> {
    pub char: Array2<T>,
    pub word: Array2<T>,
    pub para: Array2<T>,
    pub stat: Array2<T>,
    pub topic: Option<Array2<T>>,
}

fn stack<T: Scalar>(rows: &[&[f64]], width: usize, what: &str) -> Result<Array2<T>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "{what} features have {} values, model expects {width}",
                row.len()
            )));
        }
        out.row_mut(i)
            .iter_mut()
            .zip(row.iter())
            .for_each(|(o, v)| *o = T::of(*v));
    }
    Ok(out)
}

impl<T: Scalar> InputBatch<T> {
    /// Stacks column inputs, checking every width against `dims`. Topic
    /// vectors must be present on every row exactly when `dims.topic` is set.
    pub fn from_columns(columns: &[ColumnInput<'_>], dims: &InputDims) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let rows = |f: fn(&ColumnFeatures) -> &[f64]| {
            columns.iter().map(|c| f(c.features)).collect::<Vec<_>>()
        };
        let topic = match dims.topic {
            Some(k) => {
                let topics = columns
                    .iter()
                    .map(|c| c.topic.map(TopicVector::as_slice))
                    .collect::<Option<Vec<_>>>()
                    .ok_or(Error::MissingStage(
                        "topic vector required by topic-aware classifier",
                    ))?;
                Some(stack(&topics, k, "topic")?)
            }
            None => {
                if columns.iter().any(|c| c.topic.is_some()) {
                    return Err(Error::InvalidArgument(
                        "topic vector supplied to a classifier without a topic subnetwork".into(),
                    ));
                }
                None
            }
        };
        Ok(InputBatch {
            char: stack(&rows(|f| &f.char), dims.char, "char")?,
            word: stack(&rows(|f| &f.word), dims.word, "word")?,
            para: stack(&rows(|f| &f.para), dims.para, "para")?,
            stat: stack(&rows(|f| &f.stat), dims.stat, "stat")?,
            topic,
        })
    }

    pub fn rows(&self) -> usize {
        self.char.nrows()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        InputBatch {
            char: self.char.select(Axis(0), rows),
            word: self.word.select(Axis(0), rows),
            para: self.para.select(Axis(0), rows),
            stat: self.stat.select(Axis(0), rows),
            topic: self.topic.as_ref().map(|t| t.select(Axis(0), rows)),
        }
    }
}

/// How a forward pass treats batch-norm and dropout.
pub enum ForwardMode<'a> {
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from the generator when given.
    Train(Option<&'a mut ChaCha8Rng>),
}

#[derive(Debug, Clone)]
struct BlockCache<T: Scalar> {
    input: Array2<T>,
    bn: BatchNormCache<T>,
    normalized: Array2<T>,
    mask: Option<Array2<T>>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Scalar> {
    pub probabilities: Array2<T>,
    pub log_probabilities: Array2<T>,
    subnets: Vec<SubnetCache<T>>,
    stat_input: Array2<T>,
    blocks: [BlockCache<T>; 2],
    output_input: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T: Scalar> {
    pub config: NetworkConfig,
    pub char_net: Subnet<T>,
    pub word_net: Subnet<T>,
    pub para_net: Subnet<T>,
    pub topic_net: Option<Subnet<T>>,
    /// Fixed standardization of the statistics block: `(x - shift) * scale`.
    pub stat_shift: Array1<T>,
    pub stat_scale: Array1<T>,
    pub primary: [Dense<T>; 2],
    pub norms: [BatchNorm<T>; 2],
    pub output: Dense<T>,
}

/// Named view of one parameter tensor.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [T],
    pub decay: bool,
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub values: &'a mut [T],
    pub decay: bool,
}

fn vector<T: Scalar>(name: String, a: &Array1<T>) -> ParamRef<'_, T> {
    ParamRef {
        name,
        shape: vec![a.len()],
        values: a.as_slice().expect("standard layout"),
        decay: false,
    }
}

impl<T: Scalar> ClassifierModel<T> {
    /// Seeded initialization; batch-norm scale 1, shift 0, running stats (0, 1).
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, o) = (config.subnet_hidden, config.subnet_out);
        let i = &config.inputs;
        let char_net = Subnet::init(&mut rng, i.char, h, o);
        let word_net = Subnet::init(&mut rng, i.word, h, o);
        let para_net = Subnet::init(&mut rng, i.para, h, o);
        let topic_net = i.topic.map(|k| Subnet::init(&mut rng, k, h, o));
        let p = config.primary_hidden;
        let primary = [
            Dense::init(&mut rng, config.primary_input(), p),
            Dense::init(&mut rng, p, p),
        ];
        let output = Dense::init(&mut rng, p, config.type_count);
        Ok(ClassifierModel {
            stat_shift: Array1::zeros(i.stat),
            stat_scale: Array1::ones(i.stat),
            char_net,
            word_net,
            para_net,
            topic_net,
            primary,
            norms: [BatchNorm::new(p), BatchNorm::new(p)],
            output,
            config,
        })
    }

    /// Same structure with every tensor zeroed; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ClassifierModel {
            config: self.config.clone(),
            char_net: self.char_net.zeros_like(),
            word_net: self.word_net.zeros_like(),
            para_net: self.para_net.zeros_like(),
            topic_net: self.topic_net.as_ref().map(Subnet::zeros_like),
            stat_shift: Array1::zeros(self.stat_shift.len()),
            stat_scale: Array1::zeros(self.stat_scale.len()),
            primary: [self.primary[0].zeros_like(), self.primary[1].zeros_like()],
            norms: [self.norms[0].zeros_like(), self.norms[1].zeros_like()],
            output: self.output.zeros_like(),
        }
    }

    pub fn type_count(&self) -> usize {
        self.config.type_count
    }

    fn subnets(&self) -> Vec<(&'static str, &Subnet<T>)> {
        let mut nets = vec![
            ("char", &self.char_net),
            ("word", &self.word_net),
            ("para", &self.para_net),
        ];
        if let Some(t) = &self.topic_net {
            nets.push(("topic", t));
        }
        nets
    }

    fn subnets_mut(&mut self) -> Vec<(&'static str, &mut Subnet<T>)> {
        let mut nets = vec![
            ("char", &mut self.char_net),
            ("word", &mut self.word_net),
            ("para", &mut self.para_net),
        ];
        if let Some(t) = &mut self.topic_net {
            nets.push(("topic", t));
        }
        nets
    }

    /// Trainable tensors in a fixed order, row-major. Weight matrices decay;
    /// biases and batch-norm parameters do not.
    pub fn parameters(&self) -> Vec<ParamRef<'_, T>> {
        fn dense<'a, T: Scalar>(name: String, d: &'a Dense<T>, out: &mut Vec<ParamRef<'a, T>>) {
            out.push(ParamRef {
                name: format!("{name}.weight"),
                shape: d.weight.shape().to_vec(),
                values: d.weight.as_slice().expect("standard layout"),
                decay: true,
            });
            out.push(vector(format!("{name}.bias"), &d.bias));
        }
        let mut out = Vec::new();
        for (group, net) in self.subnets() {
            dense(format!("{group}.hidden"), &net.hidden, &mut out);
            dense(format!("{group}.out"), &net.out, &mut out);
        }
        for (i, (layer, norm)) in self.primary.iter().zip(&self.norms).enumerate() {
            dense(format!("primary{}", i + 1), layer, &mut out);
            out.push(vector(format!("bn{}.gamma", i + 1), &norm.gamma));
            out.push(vector(format!("bn{}.beta", i + 1), &norm.beta));
        }
        dense("output".into(), &self.output, &mut out);
        out
    }

    /// Mutable counterpart of [`parameters`](Self::parameters), same order.
    pub fn parameters_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn dense<'a, T: Scalar>(name: String, d: &'a mut Dense<T>, out: &mut Vec<ParamMut<'a, T>>) {
            out.push(ParamMut {
                name: format!("{name}.weight"),
                values: d.weight.as_slice_mut().expect("standard layout"),
                decay: true,
            });
            out.push(ParamMut {
                name: format!("{name}.bias"),
                values: d.bias.as_slice_mut().expect("standard layout"),
                decay: false,
            });
        }
        let mut out = Vec::new();
        let ClassifierModel {
            char_net,
            word_net,
            para_net,
            topic_net,
            primary,
            norms,
            output,
            ..
        } = self;
        let mut nets = vec![("char", char_net), ("word", word_net), ("para", para_net)];
        if let Some(t) = topic_net {
            nets.push(("topic", t));
        }
        for (group, net) in nets {
            dense(format!("{group}.hidden"), &mut net.hidden, &mut out);
            dense(format!("{group}.out"), &mut net.out, &mut out);
        }
        for (i, (layer, norm)) in primary.iter_mut().zip(norms.iter_mut()).enumerate() {
            dense(format!("primary{}", i + 1), layer, &mut out);
            out.push(ParamMut {
                name: format!("bn{}.gamma", i + 1),
                values: norm.gamma.as_slice_mut().expect("standard layout"),
                decay: false,
            });
            out.push(ParamMut {
                name: format!("bn{}.beta", i + 1),
                values: norm.beta.as_slice_mut().expect("standard layout"),
                decay: false,
            });
        }
        dense("output".into(), output, &mut out);
        out
    }

    /// Non-trainable state: stat standardization and batch-norm running statistics.
    pub fn buffers(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = vec![
            vector("stat.shift".into(), &self.stat_shift),
            vector("stat.scale".into(), &self.stat_scale),
        ];
        for (i, norm) in self.norms.iter().enumerate() {
            out.push(vector(
                format!("bn{}.running_mean", i + 1),
                &norm.running_mean,
            ));
            out.push(vector(
                format!("bn{}.running_var", i + 1),
                &norm.running_var,
            ));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = vec![
            (
                "stat.shift".into(),
                self.stat_shift.as_slice_mut().expect("standard layout"),
            ),
            (
                "stat.scale".into(),
                self.stat_scale.as_slice_mut().expect("standard layout"),
            ),
        ];
        for (i, norm) in self.norms.iter_mut().enumerate() {
            out.push((
                format!("bn{}.running_mean", i + 1),
                norm.running_mean.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("bn{}.running_var", i + 1),
                norm.running_var.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }

    fn check_batch(&self, batch: &InputBatch<T>) -> Result<()> {
        let i = &self.config.inputs;
        let widths = [
            ("char", batch.char.ncols(), i.char),
            ("word", batch.word.ncols(), i.word),
            ("para", batch.para.ncols(), i.para),
            ("stat", batch.stat.ncols(), i.stat),
        ];
        for (what, got, want) in widths {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{what} input has width {got}, expected {want}"
                )));
            }
        }
        match (&batch.topic, i.topic) {
            (Some(t), Some(k)) if t.ncols() == k => Ok(()),
            (Some(t), Some(k)) => Err(Error::DimensionMismatch(format!(
                "topic input has width {}, expected {k}",
                t.ncols()
            ))),
            (None, Some(_)) => Err(Error::MissingStage(
                "topic vector required by topic-aware classifier",
            )),
            (Some(_), None) => Err(Error::InvalidArgument(
                "topic vector supplied to a classifier without a topic subnetwork".into(),
            )),
            (None, None) => Ok(()),
        }
    }

    pub fn forward(&self, batch: &InputBatch<T>, mode: ForwardMode<'_>) -> Result<ForwardPass<T>> {
        self.check_batch(batch)?;
        let act = self.config.activation;
        let (batch_stats, mut rng) = match mode {
            ForwardMode::Eval => (false, None),
            ForwardMode::Train(rng) => (true, rng),
        };
        let mut inputs: Vec<&Array2<T>> = vec![&batch.char, &batch.word, &batch.para];
        if let Some(t) = &batch.topic {
            inputs.push(t);
        }
        let mut pieces = Vec::new();
        let mut subnets = Vec::new();
        for ((_, net), x) in self.subnets().into_iter().zip(inputs) {
            let (out, cache) = net.forward(x, act);
            pieces.push(out);
            subnets.push(cache);
        }
        let stat_input = (&batch.stat - &self.stat_shift) * &self.stat_scale;
        pieces.push(stat_input.clone());
        let views: Vec<ArrayView2<T>> = pieces.iter().map(|p| p.view()).collect();
        let mut x =
            concatenate(Axis(1), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))?;

        let keep = 1.0 - self.config.dropout_rate;
        let mut blocks = Vec::with_capacity(2);
        for (layer, norm) in self.primary.iter().zip(&self.norms) {
            let pre = layer.forward(&x.view());
            let (normalized, bn) = norm.forward(&pre, batch_stats);
            let mut out = act.apply(&normalized);
            let mask = match rng.as_deref_mut() {
                Some(rng) if self.config.dropout_rate > 0.0 => {
                    let scale = T::of(1.0 / keep);
                    let mask = Array2::from_shape_fn(out.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    });
                    out *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            blocks.push(BlockCache {
                input: std::mem::replace(&mut x, out),
                bn,
                normalized,
                mask,
            });
        }
        let logits = self.output.forward(&x.view());
        let max = logits.map_axis(Axis(1), |row| row.fold(T::neg_infinity(), |a, &b| a.max(b)));
        let shifted = &logits - &max.insert_axis(Axis(1));
        let lse = shifted.mapv(T::exp).sum_axis(Axis(1)).mapv(T::ln);
        let log_probabilities = shifted - &lse.insert_axis(Axis(1));
        let probabilities = log_probabilities.mapv(T::exp);
        let blocks: [BlockCache<T>; 2] = blocks
            .try_into()
            .map_err(|_| Error::DimensionMismatch("blocks".into()))?;
        Ok(ForwardPass {
            probabilities,
            log_probabilities,
            subnets,
            stat_input,
            blocks,
            output_input: x,
        })
    }

    /// Mean cross-entropy of a forward pass against labels.
    pub fn loss(pass: &ForwardPass<T>, labels: &[TypeId]) -> T {
        let n = T::of(labels.len() as f64);
        labels
            .iter()
            .enumerate()
            .map(|(i, y)| -pass.log_probabilities[[i, y.0]])
            .sum::<T>()
            / n
    }

    /// Gradient of the mean cross-entropy with respect to every parameter,
    /// returned in a zero-initialized model of the same shape.
    pub fn backward(
        &self,
        batch: &InputBatch<T>,
        pass: &ForwardPass<T>,
        labels: &[TypeId],
    ) -> Result<Self> {
        if labels.len() != batch.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|y| y.0 >= self.type_count()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside vocabulary"
            )));
        }
        let act = self.config.activation;
        let mut grad = self.zeros_like();
        let n = T::of(labels.len() as f64);
        let mut dlogits = pass.probabilities.clone();
        for (i, y) in labels.iter().enumerate() {
            dlogits[[i, y.0]] -= T::one();
        }
        dlogits.mapv_inplace(|v| v / n);
        let mut dx = self
            .output
            .backward(&pass.output_input.view(), &dlogits, &mut grad.output);
        for b in (0..2).rev() {
            let block = &pass.blocks[b];
            if let Some(mask) = &block.mask {
                dx *= mask;
            }
            let dnorm = act.backward(&block.normalized, dx);
            let dpre = self.norms[b].backward(&block.bn, &dnorm, &mut grad.norms[b]);
            dx = self.primary[b].backward(&block.input.view(), &dpre, &mut grad.primary[b]);
        }
        let o = self.config.subnet_out;
        let mut inputs: Vec<&Array2<T>> = vec![&batch.char, &batch.word, &batch.para];
        if let Some(t) = &batch.topic {
            inputs.push(t);
        }
        let nets = self.subnets();
        let mut grad_nets = grad.subnets_mut();
        for (k, (((_, net), x), cache)) in nets.iter().zip(inputs).zip(&pass.subnets).enumerate() {
            let dy = dx.slice(s![.., k * o..(k + 1) * o]).to_owned();
            net.backward(x, cache, &dy, act, grad_nets[k].1);
        }
        debug_assert_eq!(pass.stat_input.ncols() + nets.len() * o, dx.ncols());
        Ok(grad)
    }

    /// Class probabilities in eval mode, one row per column.
    pub fn predict_proba(&self, columns: &[ColumnInput<'_>]) -> Result<Array2<T>> {
        let batch = InputBatch::from_columns(columns, &self.config.inputs)?;
        Ok(self.forward(&batch, ForwardMode::Eval)?.probabilities)
    }

    /// Log-probabilities in eval mode, one row per column.
    pub fn predict_log_proba(&self, columns: &[ColumnInput<'_>]) -> Result<Array2<T>> {
        let batch = InputBatch::from_columns(columns, &self.config.inputs)?;
        Ok(self.forward(&batch, ForwardMode::Eval)?.log_probabilities)
    }

    fn update_running_stats(&mut self, pass: &ForwardPass<T>, rows: usize) {
        for (norm, block) in self.norms.iter_mut().zip(&pass.blocks) {
            norm.update_running(&block.bn, rows);
        }
    }

    /// Sets the stat standardization to the training set's mean and inverse
    /// population std (scale 1 for constant features).
    pub fn fit_stat_standardization(&mut self, stat: &Array2<T>) {
        let n = T::of(stat.nrows().max(1) as f64);
        let mean = stat.sum_axis(Axis(0)) / n;
        let centered = stat - &mean;
        let var = (&centered * &centered).sum_axis(Axis(0)) / n;
        self.stat_scale = var.mapv(|v| {
            let sd = v.sqrt();
            if sd > T::of(1e-12) && sd.is_finite() {
                T::one() / sd
            } else {
                T::one()
            }
        });
        self.stat_shift = mean.mapv(|m| if m.is_finite() { m } else { T::zero() });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fit the stat standardization to the training set; when off the raw
    /// statistics are fed unchanged.
    pub standardize_stat: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
            standardize_stat: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining<T: Scalar> {
    pub model: ClassifierModel<T>,
    /// Mean training cross-entropy of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam with decoupled weight decay on the mean cross-entropy.
/// Batches are reshuffled every epoch under `config.seed`. The stat
/// standardization is fitted to the training set before the first epoch
/// when `config.standardize_stat` is set.
pub fn train_classifier<T: Scalar>(
    model: &ClassifierModel<T>,
    columns: &[ColumnInput<'_>],
    labels: &[TypeId],
    config: &TrainConfig,
) -> Result<ClassifierTraining<T>> {
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument(
            "invalid classifier training configuration".into(),
        ));
    }
    if columns.len() != labels.len() || columns.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} training columns with {} labels",
            columns.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|y| y.0 >= model.type_count()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside vocabulary"
        )));
    }
    let data = InputBatch::<T>::from_columns(columns, &model.config.inputs)?;
    let mut model = model.clone();
    if config.standardize_stat {
        model.fit_stat_standardization(&data.stat);
    }
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.values.len()).collect();
    let decay: Vec<bool> = model.parameters().iter().map(|p| p.decay).collect();
    let mut adam = Adam::new(
        AdamConfig::new(config.learning_rate, config.weight_decay),
        sizes,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let batch_labels: Vec<TypeId> = chunk.iter().map(|&i| labels[i]).collect();
            let pass = model.forward(&batch, ForwardMode::Train(Some(&mut rng)))?;
            let loss = ClassifierModel::loss(&pass, &batch_labels).to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("cross-entropy {loss} on a batch of {}", chunk.len()),
                });
            }
            total += loss * chunk.len() as f64;
            let grad = model.backward(&batch, &pass, &batch_labels)?;
            model.update_running_stats(&pass, chunk.len());
            let grads = grad.parameters();
            let grad_slices: Vec<&[T]> = grads.iter().map(|g| g.values).collect();
            let mut params = model.parameters_mut();
            let mut param_slices: Vec<&mut [T]> =
                params.iter_mut().map(|p| &mut *p.values).collect();
            adam.step(&mut param_slices, &grad_slices, &decay)?;
        }
        trace.push(total / labels.len() as f64);
    }
    Ok(ClassifierTraining {
        model,
        loss_trace: trace,
    })
}

/// One parameter entry compared by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEntry {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientEntry {
    /// `|a - n| / max(1e-8, |a| + |n|)`.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub entries: Vec<GradientEntry>,
}

impl GradientReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .map(GradientEntry::relative_error)
            .fold(0.0, f64::max)
    }

    /// Worst relative error among entries where `|a| + |n|` reaches `floor`,
    /// and worst absolute error among the rest. Biases feeding a batch-norm
    /// layer have an exactly zero gradient under batch statistics, so their
    /// finite differences are pure rounding noise.
    pub fn split_errors(&self, floor: f64) -> (f64, f64) {
        self.entries.iter().fold((0.0, 0.0), |(rel, abs), e| {
            if e.analytic.abs() + e.numeric.abs() >= floor {
                (rel.max(e.relative_error()), abs)
            } else {
                (rel, abs.max((e.analytic - e.numeric).abs()))
            }
        })
    }

    pub fn worst(&self) -> Option<&GradientEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
    }
}

/// Compares the analytic gradient of the mean cross-entropy with central
/// finite differences for every trainable parameter. Dropout is off;
/// batch-norm uses batch statistics when `batch_stats` is set and running
/// statistics otherwise.
pub fn gradient_check<T: Scalar>(
    model: &ClassifierModel<T>,
    batch: &InputBatch<T>,
    labels: &[TypeId],
    epsilon: f64,
    batch_stats: bool,
) -> Result<GradientReport> {
    let mode = || {
        if batch_stats {
            ForwardMode::Train(None)
        } else {
            ForwardMode::Eval
        }
    };
    let pass = model.forward(batch, mode())?;
    let grad = model.backward(batch, &pass, labels)?;
    let analytic: Vec<(String, Vec<T>)> = grad
        .parameters()
        .iter()
        .map(|p| (p.name.clone(), p.values.to_vec()))
        .collect();
    let mut probe = model.clone();
    let loss_at = |probe: &ClassifierModel<T>| -> Result<f64> {
        Ok(ClassifierModel::loss(&probe.forward(batch, mode())?, labels).to_f64_lossy())
    };
    let mut entries = Vec::new();
    for (p, (name, grads)) in analytic.iter().enumerate() {
        for (j, g) in grads.iter().enumerate() {
            let original = probe.parameters_mut()[p].values[j];
            probe.parameters_mut()[p].values[j] = original + T::of(epsilon);
            let plus = loss_at(&probe)?;
            probe.parameters_mut()[p].values[j] = original - T::of(epsilon);
            let minus = loss_at(&probe)?;
            probe.parameters_mut()[p].values[j] = original;
            entries.push(GradientEntry {
                parameter: name.clone(),
                index: j,
                analytic: g.to_f64_lossy(),
                numeric: (plus - minus) / (2.0 * epsilon),
            });
        }
    }
    Ok(GradientReport { entries })
}
