//! Per-type and aggregate F1, ablations and permutation importance.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::corpus::{Folds, Table, TypeId, TypeVocabulary};
use crate::error::{Error, Result};
use crate::featurizer::FeatureGroup;
use crate::pipeline::{self, ModelBundle, PredictMode, TableInputs};

/// One evaluated column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub table_id: String,
    pub column_index: usize,
    pub gold: TypeId,
    pub predicted: TypeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeScore {
    pub type_id: TypeId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Scores for every type of the vocabulary, in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_type: Vec<TypeScore>,
    /// Unweighted mean F1 over types with non-zero support.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    /// Fraction of records predicted correctly.
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per type, with every 0/0 taken as 0.
pub fn f1_report(records: &[PredictionRecord], type_count: usize) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no prediction records".into()));
    }
    let mut tp = vec![0usize; type_count];
    let mut predicted = vec![0usize; type_count];
    let mut support = vec![0usize; type_count];
    for r in records {
        if r.gold.0 >= type_count || r.predicted.0 >= type_count {
            return Err(Error::InvalidArgument(format!(
                "record {}:{} has a type outside the vocabulary",
                r.table_id, r.column_index
            )));
        }
        support[r.gold.0] += 1;
        predicted[r.predicted.0] += 1;
        if r.gold == r.predicted {
            tp[r.gold.0] += 1;
        }
    }
    let per_type: Vec<TypeScore> = (0..type_count)
        .map(|t| {
            let precision = ratio(tp[t], predicted[t]);
            let recall = ratio(tp[t], support[t]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            TypeScore {
                type_id: TypeId(t),
                precision,
                recall,
                f1,
                support: support[t],
            }
        })
        .collect();
    let supported: Vec<&TypeScore> = per_type.iter().filter(|s| s.support > 0).collect();
    let macro_f1 = supported.iter().map(|s| s.f1).sum::<f64>() / supported.len() as f64;
    let weighted_f1 = per_type
        .iter()
        .map(|s| s.f1 * s.support as f64)
        .sum::<f64>()
        / records.len() as f64;
    Ok(MetricReport {
        per_type,
        macro_f1,
        weighted_f1,
        accuracy: ratio(tp.iter().sum(), records.len()),
    })
}

impl MetricReport {
    /// `type\tprecision\trecall\tf1\tsupport`, one line per supported type.
    pub fn to_tsv(&self, vocab: &TypeVocabulary) -> String {
        let mut out = String::from("type\tprecision\trecall\tf1\tsupport\n");
        for s in self.per_type.iter().filter(|s| s.support > 0) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                vocab.name(s.type_id),
                s.precision,
                s.recall,
                s.f1,
                s.support
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let support: usize = self.per_type.iter().map(|s| s.support).sum();
        let types = self.per_type.iter().filter(|s| s.support > 0).count();
        format!(
            "{{\"macro_f1\": {}, \"weighted_f1\": {}, \"accuracy\": {}, \"support\": {support}, \"types\": {types}}}",
            self.macro_f1, self.weighted_f1, self.accuracy
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeDelta {
    pub type_id: TypeId,
    pub f1_a: f64,
    pub f1_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    /// Sorted by descending delta, then type index.
    pub deltas: Vec<TypeDelta>,
    pub improved: usize,
    pub equal: usize,
    pub worsened: usize,
}

/// Per-type `a.f1 - b.f1` over the whole vocabulary.
pub fn per_type_delta(a: &MetricReport, b: &MetricReport) -> Result<DeltaReport> {
    if a.per_type.len() != b.per_type.len() {
        return Err(Error::DimensionMismatch(format!(
            "reports cover {} and {} types",
            a.per_type.len(),
            b.per_type.len()
        )));
    }
    let mut deltas: Vec<TypeDelta> = a
        .per_type
        .iter()
        .zip(&b.per_type)
        .map(|(x, y)| TypeDelta {
            type_id: x.type_id,
            f1_a: x.f1,
            f1_b: y.f1,
            delta: x.f1 - y.f1,
        })
        .collect();
    deltas.sort_by(|x, y| y.delta.total_cmp(&x.delta).then(x.type_id.cmp(&y.type_id)));
    let improved = deltas.iter().filter(|d| d.delta > 0.0).count();
    let worsened = deltas.iter().filter(|d| d.delta < 0.0).count();
    Ok(DeltaReport {
        improved,
        worsened,
        equal: deltas.len() - improved - worsened,
        deltas,
    })
}

impl DeltaReport {
    /// `type\tf1_a\tf1_b\tdelta`.
    pub fn to_tsv(&self, vocab: &TypeVocabulary) -> String {
        let mut out = String::from("type\tf1_a\tf1_b\tdelta\n");
        for d in &self.deltas {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                vocab.name(d.type_id),
                d.f1_a,
                d.f1_b,
                d.delta
            ));
        }
        out
    }
}

/// Mean with a normal-approximation 95% interval half-width,
/// `1.96 · s / sqrt(n)` using the sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

pub fn mean_ci(values: &[f64]) -> Interval {
    let n = values.len();
    if n == 0 {
        return Interval {
            mean: 0.0,
            half_width: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Interval {
            mean,
            half_width: 0.0,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Interval {
        mean,
        half_width: 1.96 * var.sqrt() / (n as f64).sqrt(),
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.half_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Base,
    SatoNoTopic,
    SatoNoStruct,
    Sato,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::SatoNoTopic,
        Variant::SatoNoStruct,
        Variant::Sato,
    ];

    pub fn mode(self) -> PredictMode {
        match self {
            Variant::Base => PredictMode::Base,
            Variant::SatoNoTopic => PredictMode::NoTopic,
            Variant::SatoNoStruct => PredictMode::NoStruct,
            Variant::Sato => PredictMode::Full,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "Base",
            Variant::SatoNoTopic => "Sato_noTopic",
            Variant::SatoNoStruct => "Sato_noStruct",
            Variant::Sato => "Sato",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Reports of the four variants on one fold, indexed like [`Variant::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub reports: [MetricReport; 4],
    pub records: [Vec<PredictionRecord>; 4],
}

impl FoldResult {
    pub fn report(&self, variant: Variant) -> &MetricReport {
        &self.reports[variant as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub macro_f1: Interval,
    pub weighted_f1: Interval,
}

impl AblationReport {
    pub fn rows(&self) -> Vec<AblationRow> {
        Variant::ALL
            .into_iter()
            .map(|variant| {
                let macros: Vec<f64> = self
                    .folds
                    .iter()
                    .map(|f| f.report(variant).macro_f1)
                    .collect();
                let weighted: Vec<f64> = self
                    .folds
                    .iter()
                    .map(|f| f.report(variant).weighted_f1)
                    .collect();
                AblationRow {
                    variant,
                    macro_f1: mean_ci(&macros),
                    weighted_f1: mean_ci(&weighted),
                }
            })
            .collect()
    }

    /// `variant\tmacro_f1\tmacro_ci\tweighted_f1\tweighted_ci`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tmacro_f1\tmacro_ci\tweighted_f1\tweighted_ci\n");
        for row in self.rows() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.variant,
                row.macro_f1.mean,
                row.macro_f1.half_width,
                row.weighted_f1.mean,
                row.weighted_f1.half_width
            ));
        }
        out
    }
}

/// Prediction records of the labeled columns of `tables` under `mode`.
/// Unlabeled columns are dropped before prediction, so the CRF decodes
/// the sequence of labeled columns; topic vectors still use every cell.
pub fn evaluate_tables(
    bundle: &ModelBundle,
    tables: &[Table],
    mode: PredictMode,
) -> Result<Vec<PredictionRecord>> {
    bundle.require(mode)?;
    let (inputs, golds) = labeled_inputs(bundle, tables, mode.uses_topic())?;
    records_for(bundle, &inputs, &golds, mode)
}

fn labeled_inputs(
    bundle: &ModelBundle,
    tables: &[Table],
    with_topic: bool,
) -> Result<(Vec<TableInputs>, Vec<Vec<TypeId>>)> {
    let labeled = pipeline::prepare_labeled_inputs(bundle, tables, with_topic)?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled columns to evaluate".into(),
        ));
    }
    Ok(labeled.into_iter().unzip())
}

fn records_for(
    bundle: &ModelBundle,
    inputs: &[TableInputs],
    golds: &[Vec<TypeId>],
    mode: PredictMode,
) -> Result<Vec<PredictionRecord>> {
    let predictions = pipeline::predict_inputs(bundle, inputs, mode)?;
    let mut records = Vec::new();
    for ((table, preds), gold) in inputs.iter().zip(predictions).zip(golds) {
        for (pred, &gold) in preds.iter().zip(gold) {
            records.push(PredictionRecord {
                table_id: table.table_id.clone(),
                column_index: pred.column_index,
                gold,
                predicted: pred.type_id,
            });
        }
    }
    Ok(records)
}

/// Trains a bundle on each fold's training tables and scores all four
/// variants on its test tables. `tables` must carry labels from `vocab`.
pub fn run_ablation(
    tables: &[Table],
    vocab: &TypeVocabulary,
    folds: &Folds,
    config: &PipelineConfig,
) -> Result<AblationReport> {
    let mut results = Vec::with_capacity(folds.k());
    for (fold, split) in folds.splits().into_iter().enumerate() {
        let train: Vec<Table> = split.train.iter().map(|&i| tables[i].clone()).collect();
        let test: Vec<Table> = split.test.iter().map(|&i| tables[i].clone()).collect();
        let mut fold_config = config.clone();
        fold_config.train_lda = true;
        fold_config.train_topic = true;
        fold_config.train_crf = true;
        let (bundle, _) = pipeline::train_bundle(&train, vocab, &fold_config)?;
        let (inputs, golds) = labeled_inputs(&bundle, &test, true)?;
        let mut records = Vec::with_capacity(4);
        let mut reports = Vec::with_capacity(4);
        for variant in Variant::ALL {
            let r = records_for(&bundle, &inputs, &golds, variant.mode())?;
            reports.push(f1_report(&r, vocab.len())?);
            records.push(r);
        }
        log::info!(
            "fold {fold}: {}",
            Variant::ALL
                .iter()
                .zip(&reports)
                .map(|(v, r)| format!("{v} macro {:.4}", r.macro_f1))
                .collect::<Vec<_>>()
                .join(", ")
        );
        results.push(FoldResult {
            fold,
            reports: reports.try_into().expect("four variants"),
            records: records.try_into().expect("four variants"),
        });
    }
    Ok(AblationReport { folds: results })
}

/// Normalized F1 drops from permuting one feature group, averaged over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Importance {
    pub group: FeatureGroup,
    pub macro_drop: f64,
    pub weighted_drop: f64,
    pub trials: usize,
}

fn normalized_drop(baseline: f64, permuted: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (baseline - permuted) / baseline
    }
}

/// Permutation importance with explicit permutations. Each permutation
/// reorders the group's vectors across all test columns, or across tables
/// for the topic group, and must have the matching length.
pub fn importance_with_permutations(
    bundle: &ModelBundle,
    tables: &[Table],
    group: FeatureGroup,
    mode: PredictMode,
    permutations: &[Vec<usize>],
) -> Result<Importance> {
    if permutations.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one trial is required".into(),
        ));
    }
    if group == FeatureGroup::Topic && !mode.uses_topic() {
        return Err(Error::InvalidArgument(format!(
            "the {mode} model has no topic input to permute"
        )));
    }
    bundle.require(mode)?;
    let (inputs, golds) = labeled_inputs(bundle, tables, mode.uses_topic())?;
    let types = bundle.vocabulary.len();
    let baseline = f1_report(&records_for(bundle, &inputs, &golds, mode)?, types)?;
    let units = permutation_units(&inputs, group);
    let (mut macro_sum, mut weighted_sum) = (0.0, 0.0);
    for perm in permutations {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..units).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "permutation is not over {units} items"
            )));
        }
        let permuted = permute_group(&inputs, group, perm);
        let report = f1_report(&records_for(bundle, &permuted, &golds, mode)?, types)?;
        macro_sum += normalized_drop(baseline.macro_f1, report.macro_f1);
        weighted_sum += normalized_drop(baseline.weighted_f1, report.weighted_f1);
    }
    let n = permutations.len() as f64;
    Ok(Importance {
        group,
        macro_drop: macro_sum / n,
        weighted_drop: weighted_sum / n,
        trials: permutations.len(),
    })
}

/// Seeded permutation importance over `trials` uniformly random permutations.
pub fn permutation_importance(
    bundle: &ModelBundle,
    tables: &[Table],
    group: FeatureGroup,
    mode: PredictMode,
    trials: usize,
    seed: u64,
) -> Result<Importance> {
    let labeled: Vec<&Table> = tables.iter().filter(|t| t.labeled_count() > 0).collect();
    let units = match group {
        FeatureGroup::Topic => labeled.len(),
        _ => labeled.iter().map(|t| t.labeled_count()).sum(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let permutations: Vec<Vec<usize>> = (0..trials)
        .map(|_| {
            let mut p: Vec<usize> = (0..units).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    importance_with_permutations(bundle, tables, group, mode, &permutations)
}

fn permutation_units(inputs: &[TableInputs], group: FeatureGroup) -> usize {
    match group {
        FeatureGroup::Topic => inputs.len(),
        _ => inputs.iter().map(|t| t.features.len()).sum(),
    }
}

fn permute_group(inputs: &[TableInputs], group: FeatureGroup, perm: &[usize]) -> Vec<TableInputs> {
    let mut out = inputs.to_vec();
    if group == FeatureGroup::Topic {
        for (dst, &src) in out.iter_mut().zip(perm) {
            dst.topic = inputs[src].topic.clone();
        }
        return out;
    }
    let flat: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, table)| (0..table.features.len()).map(move |c| (t, c)))
        .collect();
    for (&(t, c), &src) in flat.iter().zip(perm) {
        let (st, sc) = flat[src];
        let values = inputs[st].features[sc]
            .group(group)
            .expect("column group")
            .to_vec();
        *out[t].features[c].group_mut(group).expect("column group") = values;
    }
    out
}
