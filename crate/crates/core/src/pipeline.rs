//! Staged training (LDA, classifiers, CRF) and prediction in the four modes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{
    stage_seed, PipelineConfig, STAGE_CRF_BASE, STAGE_CRF_TOPIC, STAGE_INFER, STAGE_INIT_BASE,
    STAGE_INIT_TOPIC, STAGE_TRAIN_BASE, STAGE_TRAIN_TOPIC,
};
use crate::corpus::{cooccurrence, Table, TypeId, TypeVocabulary};
use crate::crf::{
    independent_decode, init_pairwise_from_cooccurrence, train_crf, CrfModel, LabeledChain,
    UnaryPotentials,
};
use crate::error::{Error, Result};
use crate::featurizer::{feature_hash, featurize_column, ColumnFeatures, FeatureConfig};
use crate::neural::{train_classifier, ClassifierModel, ColumnInput, InputDims, NetworkConfig};
use crate::topics::{
    infer_topics, table_to_document, train_lda, type_topic_means, InferConfig, LdaModel,
    TopicVector,
};

/// Which components produce a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictMode {
    /// Base classifier, per-column argmax.
    Base,
    /// Base classifier unaries decoded by the CRF.
    NoTopic,
    /// Topic-aware classifier, per-column argmax.
    NoStruct,
    /// Topic-aware unaries decoded by the CRF.
    Full,
}

impl PredictMode {
    pub const ALL: [PredictMode; 4] = [
        PredictMode::Base,
        PredictMode::NoTopic,
        PredictMode::NoStruct,
        PredictMode::Full,
    ];

    pub fn uses_topic(self) -> bool {
        matches!(self, PredictMode::NoStruct | PredictMode::Full)
    }

    pub fn uses_crf(self) -> bool {
        matches!(self, PredictMode::NoTopic | PredictMode::Full)
    }
}

impl fmt::Display for PredictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictMode::Base => "base",
            PredictMode::NoTopic => "notopic",
            PredictMode::NoStruct => "nostruct",
            PredictMode::Full => "full",
        })
    }
}

impl FromStr for PredictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown mode {s:?}; expected base|notopic|nostruct|full"
                ))
            })
    }
}

/// Everything needed to predict: features, vocabulary and trained stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub feature_config: FeatureConfig,
    pub vocabulary: TypeVocabulary,
    pub lda: Option<LdaModel>,
    pub infer_config: InferConfig,
    /// Base seed for per-table topic inference.
    pub infer_seed: u64,
    pub classifier_base: ClassifierModel<f64>,
    pub classifier_topic: Option<ClassifierModel<f64>>,
    /// Pairwise potentials trained on base-classifier unaries.
    pub crf_base: Option<CrfModel<f64>>,
    /// Pairwise potentials trained on topic-aware unaries.
    pub crf_topic: Option<CrfModel<f64>>,
    /// `[type][topic]` average topic vectors of the training tables.
    pub type_topic_means: Option<Vec<Vec<f64>>>,
    /// Free-form provenance: seeds, hyperparameters, corpus fingerprint.
    pub metadata: Vec<(String, String)>,
}

impl ModelBundle {
    /// Checks that every present stage agrees on the vocabulary size,
    /// feature widths and topic count.
    pub fn validate(&self) -> Result<()> {
        let types = self.vocabulary.len();
        let dims = InputDims::from_features(&self.feature_config, None);
        let check_classifier =
            |c: &ClassifierModel<f64>, topic: Option<usize>, what: &str| -> Result<()> {
                let want = InputDims {
                    topic,
                    ..dims.clone()
                };
                if c.type_count() != types || c.config.inputs != want {
                    return Err(Error::DimensionMismatch(format!(
                        "{what} expects inputs {:?} and {} types; bundle has {want:?} and {types}",
                        c.config.inputs,
                        c.type_count()
                    )));
                }
                Ok(())
            };
        check_classifier(&self.classifier_base, None, "classifier_base")?;
        if let Some(topic) = &self.classifier_topic {
            let lda = self.lda.as_ref().ok_or(Error::MissingStage("lda"))?;
            check_classifier(topic, Some(lda.topics()), "classifier_topic")?;
        }
        for (crf, what) in [(&self.crf_base, "crf_base"), (&self.crf_topic, "crf_topic")] {
            if let Some(crf) = crf {
                if crf.types() != types {
                    return Err(Error::DimensionMismatch(format!(
                        "{what} has {} types, vocabulary {types}",
                        crf.types()
                    )));
                }
            }
        }
        if let (Some(means), Some(lda)) = (&self.type_topic_means, &self.lda) {
            if means.len() != types || means.iter().any(|m| m.len() != lda.topics()) {
                return Err(Error::DimensionMismatch("type_topic_means shape".into()));
            }
        }
        Ok(())
    }

    fn classifier(&self, mode: PredictMode) -> Result<&ClassifierModel<f64>> {
        if mode.uses_topic() {
            self.classifier_topic
                .as_ref()
                .ok_or(Error::MissingStage("classifier_topic"))
        } else {
            Ok(&self.classifier_base)
        }
    }

    fn crf(&self, mode: PredictMode) -> Result<Option<&CrfModel<f64>>> {
        match mode {
            PredictMode::NoTopic => self
                .crf_base
                .as_ref()
                .map(Some)
                .ok_or(Error::MissingStage("crf_base")),
            PredictMode::Full => self
                .crf_topic
                .as_ref()
                .map(Some)
                .ok_or(Error::MissingStage("crf_topic")),
            _ => Ok(None),
        }
    }

    /// Fails naming the first stage `mode` needs that the bundle lacks.
    pub fn require(&self, mode: PredictMode) -> Result<()> {
        if mode.uses_topic() && self.lda.is_none() {
            return Err(Error::MissingStage("lda"));
        }
        self.classifier(mode)?;
        self.crf(mode)?;
        Ok(())
    }

    /// Topic vector of a whole table, seeded by the table's content.
    pub fn topic_vector(&self, table: &Table) -> Result<TopicVector> {
        let lda = self.lda.as_ref().ok_or(Error::MissingStage("lda"))?;
        let doc = table_to_document(table);
        Ok(infer_topics(
            lda,
            &doc,
            self.infer_config,
            document_content_seed(self.infer_seed, &doc),
        ))
    }
}

/// Seed for inferring one document's topics, derived from its tokens so a
/// table gets the same vector whatever batch it is predicted in.
pub fn document_content_seed(seed: u64, doc: &[String]) -> u64 {
    feature_hash(seed, 4, doc.join("\u{1f}").as_bytes())
}

/// Featurized columns of one table plus its topic vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInputs {
    pub table_id: String,
    /// Position of each featurized column in the table.
    pub column_indices: Vec<usize>,
    pub features: Vec<ColumnFeatures>,
    pub topic: Option<TopicVector>,
}

/// Featurizes every column of each table and, when `with_topic`, infers
/// the table's topic vector from all of its cells.
pub fn prepare_inputs(
    bundle: &ModelBundle,
    tables: &[Table],
    with_topic: bool,
) -> Result<Vec<TableInputs>> {
    tables
        .par_iter()
        .map(|table| {
            Ok(TableInputs {
                table_id: table.id.clone(),
                column_indices: (0..table.columns.len()).collect(),
                features: table
                    .columns
                    .iter()
                    .map(|c| featurize_column(c, &bundle.feature_config))
                    .collect(),
                topic: if with_topic {
                    Some(bundle.topic_vector(table)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

/// Like [`prepare_inputs`] but keeps only labeled columns, with their
/// positions in the original table. The topic vector still uses every cell.
pub fn prepare_labeled_inputs(
    bundle: &ModelBundle,
    tables: &[Table],
    with_topic: bool,
) -> Result<Vec<(TableInputs, Vec<TypeId>)>> {
    tables
        .par_iter()
        .filter(|t| t.labeled_count() > 0)
        .map(|table| {
            let (column_indices, labels): (Vec<usize>, Vec<TypeId>) = table
                .columns
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.label.map(|l| (i, l)))
                .unzip();
            let features = column_indices
                .iter()
                .map(|&i| featurize_column(&table.columns[i], &bundle.feature_config))
                .collect();
            let topic = if with_topic {
                Some(bundle.topic_vector(table)?)
            } else {
                None
            };
            Ok((
                TableInputs {
                    table_id: table.id.clone(),
                    column_indices,
                    features,
                    topic,
                },
                labels,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnPrediction {
    pub column_index: usize,
    pub type_id: TypeId,
    /// CRF posterior marginal of the decoded type, or its softmax
    /// probability in per-column modes.
    pub confidence: f64,
}

/// Log-softmax scores of a table's columns under a classifier.
pub fn unaries(
    classifier: &ClassifierModel<f64>,
    inputs: &TableInputs,
) -> Result<UnaryPotentials<f64>> {
    let topic = if classifier.config.use_topic() {
        Some(
            inputs
                .topic
                .as_ref()
                .ok_or(Error::MissingStage("topic vector"))?,
        )
    } else {
        None
    };
    let columns: Vec<ColumnInput> = inputs
        .features
        .iter()
        .map(|features| ColumnInput { features, topic })
        .collect();
    UnaryPotentials::new(classifier.predict_log_proba(&columns)?)
}

fn predict_one(
    bundle: &ModelBundle,
    inputs: &TableInputs,
    mode: PredictMode,
) -> Result<Vec<ColumnPrediction>> {
    if inputs.features.is_empty() {
        return Ok(Vec::new());
    }
    let u = unaries(bundle.classifier(mode)?, inputs)?;
    let (decoded, confidence): (Vec<TypeId>, Vec<f64>) = match bundle.crf(mode)? {
        Some(crf) => {
            let decoded = crf.decode(&u)?;
            let m = crf.marginals(&u)?;
            let conf = decoded
                .iter()
                .enumerate()
                .map(|(i, t)| m.node[[i, t.0]])
                .collect();
            (decoded, conf)
        }
        None => {
            let decoded = independent_decode(&u);
            let conf = decoded
                .iter()
                .enumerate()
                .map(|(i, t)| u.scores()[[i, t.0]].exp())
                .collect();
            (decoded, conf)
        }
    };
    Ok(decoded
        .into_iter()
        .zip(confidence)
        .zip(&inputs.column_indices)
        .map(|((type_id, confidence), &column_index)| ColumnPrediction {
            column_index,
            type_id,
            confidence,
        })
        .collect())
}

/// Predictions for prepared inputs, one list per table, in parallel.
pub fn predict_inputs(
    bundle: &ModelBundle,
    inputs: &[TableInputs],
    mode: PredictMode,
) -> Result<Vec<Vec<ColumnPrediction>>> {
    bundle.require(mode)?;
    inputs
        .par_iter()
        .map(|t| predict_one(bundle, t, mode))
        .collect()
}

/// Predicts every column of each table.
pub fn predict_tables(
    bundle: &ModelBundle,
    tables: &[Table],
    mode: PredictMode,
) -> Result<Vec<Vec<ColumnPrediction>>> {
    bundle.require(mode)?;
    let inputs = prepare_inputs(bundle, tables, mode.uses_topic())?;
    predict_inputs(bundle, &inputs, mode)
}

/// `table_id\tcolumn_index\ttype_name\tconfidence` lines.
pub fn predictions_tsv(
    table_ids: &[&str],
    predictions: &[Vec<ColumnPrediction>],
    vocab: &TypeVocabulary,
) -> String {
    let mut out = String::new();
    for (id, preds) in table_ids.iter().zip(predictions) {
        for p in preds {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\n",
                p.column_index,
                vocab.name(p.type_id),
                p.confidence
            ));
        }
    }
    out
}

/// Loss traces of each trained stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub lda_documents: usize,
    pub training_tables: usize,
    pub training_columns: usize,
    pub classifier_base: Vec<f64>,
    pub classifier_topic: Vec<f64>,
    pub crf_base: Vec<f64>,
    pub crf_topic: Vec<f64>,
}

/// Order-sensitive fingerprint of table ids and cell contents.
pub fn corpus_fingerprint(tables: &[Table]) -> u64 {
    let mut h = 0u64;
    for table in tables {
        let mut bytes = table.id.as_bytes().to_vec();
        for column in &table.columns {
            bytes.push(0x1e);
            bytes.extend(column.header_raw.as_bytes());
            for cell in &column.cells {
                bytes.push(0x1f);
                bytes.extend(cell.as_bytes());
            }
        }
        h = feature_hash(h, 5, &bytes);
    }
    h
}

/// Trains all enabled stages with the LDA fitted on the training tables.
pub fn train_bundle(
    tables: &[Table],
    vocab: &TypeVocabulary,
    config: &PipelineConfig,
) -> Result<(ModelBundle, TrainReport)> {
    train_bundle_with_lda_corpus(tables, tables, vocab, config)
}

/// Trains LDA on `lda_tables` (all of their cells, labels unused), then
/// the base and topic-aware classifiers and their CRFs on the labeled
/// columns of `tables`. The CRF is initialized from the co-occurrence
/// counts of `tables` and trained on the sequence of each table's
/// labeled columns.
pub fn train_bundle_with_lda_corpus(
    tables: &[Table],
    lda_tables: &[Table],
    vocab: &TypeVocabulary,
    config: &PipelineConfig,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    let feature_config = config.feature_config()?;
    let infer_seed = stage_seed(config.seed, STAGE_INFER);
    let mut report = TrainReport::default();

    let lda = if config.train_lda {
        let docs: Vec<Vec<String>> = lda_tables.iter().map(table_to_document).collect();
        report.lda_documents = docs.len();
        log::info!("training LDA on {} documents", docs.len());
        Some(train_lda(&docs, &config.lda_config())?)
    } else {
        None
    };

    let network = |topic: Option<usize>, stage: u64| NetworkConfig {
        subnet_hidden: config.subnet_hidden,
        subnet_out: config.subnet_out,
        primary_hidden: config.primary_hidden,
        dropout_rate: config.dropout,
        seed: stage_seed(config.seed, stage),
        ..NetworkConfig::new(
            InputDims::from_features(&feature_config, topic),
            vocab.len(),
        )
    };
    let mut bundle = ModelBundle {
        feature_config: feature_config.clone(),
        vocabulary: vocab.clone(),
        infer_config: config.infer_config(),
        infer_seed,
        classifier_base: ClassifierModel::init(network(None, STAGE_INIT_BASE))?,
        classifier_topic: None,
        crf_base: None,
        crf_topic: None,
        type_topic_means: None,
        metadata: Vec::new(),
        lda,
    };

    let with_topic = bundle.lda.is_some() && config.train_topic;
    let labeled = prepare_labeled_inputs(&bundle, tables, bundle.lda.is_some())?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled columns to train on".into(),
        ));
    }
    let labels: Vec<TypeId> = labeled
        .iter()
        .flat_map(|(_, l)| l.iter().copied())
        .collect();
    report.training_tables = labeled.len();
    report.training_columns = labels.len();

    let columns = |topic: bool| -> Vec<ColumnInput> {
        labeled
            .iter()
            .flat_map(|(inputs, _)| {
                let theta = if topic { inputs.topic.as_ref() } else { None };
                inputs.features.iter().map(move |features| ColumnInput {
                    features,
                    topic: theta,
                })
            })
            .collect()
    };

    log::info!("training base classifier on {} columns", labels.len());
    let base = train_classifier(
        &bundle.classifier_base,
        &columns(false),
        &labels,
        &config.classifier_train_config(STAGE_TRAIN_BASE),
    )?;
    bundle.classifier_base = base.model;
    report.classifier_base = base.loss_trace;

    if with_topic {
        let k = bundle.lda.as_ref().map(LdaModel::topics);
        log::info!("training topic-aware classifier");
        let init = ClassifierModel::init(network(k, STAGE_INIT_TOPIC))?;
        let trained = train_classifier(
            &init,
            &columns(true),
            &labels,
            &config.classifier_train_config(STAGE_TRAIN_TOPIC),
        )?;
        bundle.classifier_topic = Some(trained.model);
        report.classifier_topic = trained.loss_trace;
    }

    if let Some(lda) = &bundle.lda {
        let thetas: Vec<TopicVector> = tables
            .par_iter()
            .map(|t| {
                let doc = table_to_document(t);
                infer_topics(
                    lda,
                    &doc,
                    bundle.infer_config,
                    document_content_seed(infer_seed, &doc),
                )
            })
            .collect();
        bundle.type_topic_means = Some(type_topic_means(tables, &thetas, vocab.len()));
    }

    if config.train_crf {
        let counts = cooccurrence(tables, vocab);
        let init = CrfModel::new(init_pairwise_from_cooccurrence::<f64>(
            &counts,
            vocab.len(),
            config.crf_init_scale,
        )?);
        let chains = |classifier: &ClassifierModel<f64>| -> Result<Vec<LabeledChain<f64>>> {
            labeled
                .par_iter()
                .map(|(inputs, gold)| {
                    let gold: Vec<Option<TypeId>> = gold.iter().copied().map(Some).collect();
                    LabeledChain::new(inputs.table_id.clone(), unaries(classifier, inputs)?, &gold)
                })
                .collect()
        };
        log::info!("training CRF on base unaries");
        let trained = train_crf(
            &init,
            &chains(&bundle.classifier_base)?,
            &config.crf_train_config(STAGE_CRF_BASE),
        )?;
        bundle.crf_base = Some(trained.model);
        report.crf_base = trained.loss_trace;
        if let Some(topic) = &bundle.classifier_topic {
            log::info!("training CRF on topic-aware unaries");
            let trained = train_crf(
                &init,
                &chains(topic)?,
                &config.crf_train_config(STAGE_CRF_TOPIC),
            )?;
            bundle.crf_topic = Some(trained.model);
            report.crf_topic = trained.loss_trace;
        }
    }

    bundle.metadata = vec![
        ("seed".into(), config.seed.to_string()),
        ("training_tables".into(), report.training_tables.to_string()),
        (
            "training_columns".into(),
            report.training_columns.to_string(),
        ),
        (
            "corpus_fingerprint".into(),
            format!("{:016x}", corpus_fingerprint(tables)),
        ),
        (
            "lda_corpus_fingerprint".into(),
            format!("{:016x}", corpus_fingerprint(lda_tables)),
        ),
        ("config".into(), config.to_text()),
    ];
    bundle.validate()?;
    Ok((bundle, report))
}
