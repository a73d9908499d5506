use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tabsense::bundle;
use tabsense::corpus::{
    apply_labels, build_vocabulary, load_corpus, read_table, split_folds, Folds, Table,
    TypeVocabulary,
};
use tabsense::eval::{
    evaluate_tables, f1_report, per_type_delta, permutation_importance, run_ablation, Variant,
};
use tabsense::featurizer::FeatureGroup;
use tabsense::pipeline::{
    predict_tables, predictions_tsv, train_bundle_with_lda_corpus, PredictMode,
};
use tabsense::topics::{saliency_tsv, topic_saliency};
use tabsense::{Error, ModelBundle, PipelineConfig, Result};

const MANIFEST: &str = "manifest.txt";
const VOCABULARY: &str = "vocabulary.txt";
const FOLDS: &str = "folds.tsv";

#[derive(Parser)]
#[command(
    name = "tabsense",
    version,
    about = "Semantic type detection for table columns"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read a corpus and write a manifest, type vocabulary and fold assignment.
    Ingest {
        /// Directory of CSV files or a manifest listing them.
        corpus: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model bundle on an ingested corpus.
    Train {
        /// Manifest written by `ingest`.
        manifest: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Train on every fold except this one.
        #[arg(long)]
        fold: Option<usize>,
        /// Fit the topic model on this corpus instead of the training tables.
        #[arg(long)]
        lda_corpus: Option<PathBuf>,
        #[arg(long)]
        skip_lda: bool,
        #[arg(long)]
        skip_topic: bool,
        #[arg(long)]
        skip_crf: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Predict a semantic type for every column of the given tables.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV files, directories or manifests.
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, default_value = "full")]
        mode: PredictMode,
        /// Output TSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model on labeled tables.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Manifest written by `ingest`.
        manifest: PathBuf,
        /// Score only this fold's test tables.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value = "full")]
        mode: PredictMode,
        /// Also write permutation importance of each feature group.
        #[arg(long)]
        importance: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate the four model variants.
    Ablate {
        /// Manifest written by `ingest`.
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Rank topics by how strongly they concentrate on few types.
    InspectTopics {
        #[arg(long)]
        model: PathBuf,
        /// Types averaged per topic; defaults to the configured saliency_k.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, contents),
        None => std::io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

struct Ingested {
    tables: Vec<Table>,
    vocabulary: TypeVocabulary,
    folds: Folds,
}

/// Tables of an ingested manifest labeled with its vocabulary, plus folds.
fn read_ingested(manifest: &Path) -> Result<Ingested> {
    let corpus = load_corpus(manifest)?;
    if !corpus.skipped.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} listed tables could not be read, first: {}",
            corpus.skipped.len(),
            corpus.skipped[0].path.display()
        )));
    }
    let vocabulary = TypeVocabulary::read(&sibling(manifest, VOCABULARY))?;
    let mut tables = corpus.tables;
    apply_labels(&mut tables, &vocabulary);
    let path = sibling(manifest, FOLDS);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let folds = Folds::from_text(&text, &tables)?;
    Ok(Ingested {
        tables,
        vocabulary,
        folds,
    })
}

fn check_fold(folds: &Folds, fold: usize) -> Result<()> {
    if fold >= folds.k() {
        return Err(Error::InvalidArgument(format!(
            "fold {fold} out of range; the corpus has {} folds",
            folds.k()
        )));
    }
    Ok(())
}

fn select(tables: &[Table], indices: &[usize]) -> Vec<Table> {
    indices.iter().map(|&i| tables[i].clone()).collect()
}

fn ingest(corpus: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let loaded = load_corpus(corpus)?;
    create_dir(out)?;
    let mut skipped = String::from("path\treason\n");
    for s in &loaded.skipped {
        skipped.push_str(&format!(
            "{}\t{}\n",
            s.path.display(),
            s.reason.replace(['\t', '\n'], " ")
        ));
    }
    write_file(&out.join("skipped.tsv"), &skipped)?;
    let mut manifest = String::new();
    for table in &loaded.tables {
        let path = PathBuf::from(table.provenance.as_deref().unwrap_or_default());
        let path = path.canonicalize().map_err(|e| io_error(&path, e))?;
        manifest.push_str(&format!("{}\n", path.display()));
    }
    let manifest_path = out.join(MANIFEST);
    write_file(&manifest_path, &manifest)?;

    // reload through the manifest so table ids match later commands
    let mut tables = load_corpus(&manifest_path)?.tables;
    let vocabulary = build_vocabulary(&tables, config.min_support)?;
    vocabulary.write(&out.join(VOCABULARY))?;
    apply_labels(&mut tables, &vocabulary);
    let folds = split_folds(&tables, config.folds, config.seed)?;
    write_file(&out.join(FOLDS), &folds.to_text(&tables))?;
    let labeled: usize = tables.iter().map(Table::labeled_count).sum();
    eprintln!(
        "ingested {} tables ({} skipped), {} types, {labeled} labeled columns, {} folds",
        tables.len(),
        loaded.skipped.len(),
        vocabulary.len(),
        folds.k()
    );
    Ok(())
}

struct TrainArgs<'a> {
    manifest: &'a Path,
    out: &'a Path,
    fold: Option<usize>,
    lda_corpus: Option<&'a Path>,
}

fn train(args: TrainArgs, config: &PipelineConfig) -> Result<()> {
    let data = read_ingested(args.manifest)?;
    let tables = match args.fold {
        Some(fold) => {
            check_fold(&data.folds, fold)?;
            select(&data.tables, &data.folds.split(fold).train)
        }
        None => data.tables,
    };
    let lda_tables = match args.lda_corpus {
        Some(path) => load_corpus(path)?.tables,
        None => tables.clone(),
    };
    let (model, report) =
        train_bundle_with_lda_corpus(&tables, &lda_tables, &data.vocabulary, config)?;
    bundle::save(&model, args.out)?;
    eprintln!(
        "trained on {} tables, {} labeled columns; wrote {}",
        report.training_tables,
        report.training_columns,
        args.out.display()
    );
    Ok(())
}

fn predict(model: &Path, inputs: &[PathBuf], mode: PredictMode, out: Option<&Path>) -> Result<()> {
    let model = bundle::load(model)?;
    model.require(mode)?;
    let mut tables = Vec::new();
    for input in inputs {
        if input.is_file()
            && input
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            let id = input
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            tables.push(read_table(input, id)?);
            continue;
        }
        let loaded = load_corpus(input)?;
        for s in &loaded.skipped {
            eprintln!("skipped {}: {}", s.path.display(), s.reason);
        }
        tables.extend(loaded.tables);
    }
    let predictions = predict_tables(&model, &tables, mode)?;
    let ids: Vec<&str> = tables.iter().map(|t| t.id.as_str()).collect();
    emit(out, &predictions_tsv(&ids, &predictions, &model.vocabulary))
}

struct EvaluateArgs<'a> {
    model: &'a Path,
    manifest: &'a Path,
    fold: Option<usize>,
    mode: PredictMode,
    importance: bool,
    out: &'a Path,
}

fn evaluate(args: EvaluateArgs, config: &PipelineConfig) -> Result<()> {
    let model: ModelBundle = bundle::load(args.model)?;
    model.require(args.mode)?;
    let data = read_ingested(args.manifest)?;
    if data.vocabulary != model.vocabulary {
        return Err(Error::InvalidArgument(
            "the corpus vocabulary differs from the model's".into(),
        ));
    }
    let tables = match args.fold {
        Some(fold) => {
            check_fold(&data.folds, fold)?;
            select(&data.tables, &data.folds.split(fold).test)
        }
        None => data.tables,
    };
    let records = evaluate_tables(&model, &tables, args.mode)?;
    let report = f1_report(&records, model.vocabulary.len())?;
    create_dir(args.out)?;
    write_file(
        &args.out.join("report.tsv"),
        &report.to_tsv(&model.vocabulary),
    )?;
    write_file(
        &args.out.join("summary.json"),
        &format!("{}\n", report.summary_json()),
    )?;
    if args.importance {
        let mut text = String::from("group\tmacro_drop\tweighted_drop\ttrials\n");
        for group in FeatureGroup::ALL {
            if group == FeatureGroup::Topic && !args.mode.uses_topic() {
                continue;
            }
            let imp = permutation_importance(
                &model,
                &tables,
                group,
                args.mode,
                config.permutation_trials,
                config.seed,
            )?;
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                imp.group, imp.macro_drop, imp.weighted_drop, imp.trials
            ));
        }
        write_file(&args.out.join("importance.tsv"), &text)?;
    }
    println!("{}", report.summary_json());
    Ok(())
}

fn ablate(manifest: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let data = read_ingested(manifest)?;
    let report = run_ablation(&data.tables, &data.vocabulary, &data.folds, config)?;
    create_dir(out)?;
    write_file(&out.join("ablation.tsv"), &report.to_tsv())?;
    let mut per_fold = String::from("fold\tvariant\tmacro_f1\tweighted_f1\n");
    for fold in &report.folds {
        for variant in Variant::ALL {
            let r = fold.report(variant);
            per_fold.push_str(&format!(
                "{}\t{variant}\t{}\t{}\n",
                fold.fold, r.macro_f1, r.weighted_f1
            ));
        }
    }
    write_file(&out.join("folds.tsv"), &per_fold)?;

    // per-type deltas over the pooled records of all folds
    let pooled = |variant: Variant| {
        let records: Vec<_> = report
            .folds
            .iter()
            .flat_map(|f| f.records[variant as usize].iter().cloned())
            .collect();
        f1_report(&records, data.vocabulary.len())
    };
    let [base, _, no_struct, sato] = Variant::ALL.map(pooled);
    let (base, no_struct, sato) = (base?, no_struct?, sato?);
    let topic_delta = per_type_delta(&no_struct, &base)?;
    write_file(
        &out.join("delta_topic.tsv"),
        &topic_delta.to_tsv(&data.vocabulary),
    )?;
    let struct_delta = per_type_delta(&sato, &no_struct)?;
    write_file(
        &out.join("delta_struct.tsv"),
        &struct_delta.to_tsv(&data.vocabulary),
    )?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn inspect_topics(model: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    let model = bundle::load(model)?;
    let means = model
        .type_topic_means
        .as_ref()
        .ok_or(Error::MissingStage("type_topic_means"))?;
    let rows = topic_saliency(means, k);
    let mut text = String::from("topic\tscore\ttypes\n");
    text.push_str(&saliency_tsv(&rows, model.vocabulary.names()));
    emit(out, &text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            corpus,
            out,
            common,
        } => ingest(&corpus, &out, &common.load()?),
        Command::Train {
            manifest,
            out,
            fold,
            lda_corpus,
            skip_lda,
            skip_topic,
            skip_crf,
            common,
        } => {
            let mut config = common.load()?;
            config.train_lda &= !skip_lda;
            config.train_topic &= !skip_topic;
            config.train_crf &= !skip_crf;
            train(
                TrainArgs {
                    manifest: &manifest,
                    out: &out,
                    fold,
                    lda_corpus: lda_corpus.as_deref(),
                },
                &config,
            )
        }
        Command::Predict {
            model,
            tables,
            mode,
            out,
        } => predict(&model, &tables, mode, out.as_deref()),
        Command::Evaluate {
            model,
            manifest,
            fold,
            mode,
            importance,
            out,
            common,
        } => evaluate(
            EvaluateArgs {
                model: &model,
                manifest: &manifest,
                fold,
                mode,
                importance,
                out: &out,
            },
            &common.load()?,
        ),
        Command::Ablate {
            manifest,
            out,
            common,
        } => ablate(&manifest, &out, &common.load()?),
        Command::InspectTopics {
            model,
            k,
            out,
            common,
        } => {
            let k = match k {
                Some(k) => k,
                None => common.load()?.saliency_k,
            };
            inspect_topics(&model, k, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
