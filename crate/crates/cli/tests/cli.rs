use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tabsense::config::PipelineConfig;
use tabsense::crf::map_decode;
use tabsense::pipeline::{prepare_inputs, unaries};
use tabsense::synthetic::{ambiguity_corpus, write_csv_corpus, AmbiguityConfig};
use tabsense::{bundle, corpus};

fn tabsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabsense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tabsense(args);
    assert!(
        out.status.success(),
        "tabsense {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// A small synthetic corpus ingested with a fast configuration.
    fn new(tables: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = ambiguity_corpus(&AmbiguityConfig {
            tables,
            seed: 3,
            ..AmbiguityConfig::default()
        })
        .unwrap();
        write_csv_corpus(&dir.path().join("corpus"), &corpus.tables).unwrap();
        let config = PipelineConfig {
            min_support: 5,
            folds: 3,
            epochs: 5,
            lda_topics: 4,
            lda_iterations: 30,
            crf_epochs: 3,
            permutation_trials: 2,
            ..PipelineConfig::default()
        };
        fs::write(dir.path().join("config.txt"), config.to_text()).unwrap();
        let f = Fixture { dir };
        ok(&[
            "ingest",
            s(&f.path("corpus")),
            "--out",
            s(&f.path("data")),
            "--config",
            s(&f.path("config.txt")),
            "--seed",
            "1",
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, seed: &str, extra: &[&str]) -> Output {
        let manifest = self.path("data/manifest.txt");
        let config = self.path("config.txt");
        let out = self.path(out);
        let mut args = vec![
            "train",
            s(&manifest),
            "--config",
            s(&config),
            "--seed",
            seed,
            "--out",
            s(&out),
        ];
        args.extend(extra);
        tabsense(&args)
    }
}

#[test]
fn ingest_writes_manifest_vocabulary_and_folds() {
    let f = Fixture::new(60);
    let manifest = fs::read_to_string(f.path("data/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 60);
    let vocab = corpus::TypeVocabulary::read(&f.path("data/vocabulary.txt")).unwrap();
    assert_eq!(vocab.len(), 6);
    let folds = fs::read_to_string(f.path("data/folds.tsv")).unwrap();
    assert_eq!(folds.lines().count(), 60);
    assert!(folds
        .lines()
        .all(|l| ["0", "1", "2"].contains(&l.split('\t').next().unwrap())));
    assert_eq!(
        fs::read_to_string(f.path("data/skipped.tsv")).unwrap(),
        "path\treason\n"
    );
}

#[test]
fn training_is_byte_identical_under_a_seed() {
    let f = Fixture::new(60);
    assert!(f.train("a.tsm", "7", &[]).status.success());
    assert!(f.train("b.tsm", "7", &[]).status.success());
    assert!(f.train("c.tsm", "8", &[]).status.success());
    let a = fs::read(f.path("a.tsm")).unwrap();
    assert_eq!(a, fs::read(f.path("b.tsm")).unwrap());
    assert_ne!(a, fs::read(f.path("c.tsm")).unwrap());
    assert_eq!(&a[..8], b"TABSENSE");
}

#[test]
fn predict_prints_one_line_per_column() {
    let f = Fixture::new(60);
    assert!(f.train("m.tsm", "1", &[]).status.success());
    let table = f.path("one.csv");
    fs::write(
        &table,
        "Name,CITY,country\nann lee,paris,france\nbo chen,oslo,norway\n",
    )
    .unwrap();
    let out = ok(&[
        "predict",
        "--model",
        s(&f.path("m.tsm")),
        "--mode",
        "base",
        s(&table),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 3);
    for (i, fields) in lines.iter().enumerate() {
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], "one");
        assert_eq!(fields[1], i.to_string());
        let confidence: f64 = fields[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&confidence));
    }
}

#[test]
fn full_mode_is_map_decode_over_topic_unaries() {
    let f = Fixture::new(60);
    assert!(f.train("m.tsm", "2", &[]).status.success());
    let out_path = f.path("pred.tsv");
    ok(&[
        "predict",
        "--model",
        s(&f.path("m.tsm")),
        "--mode",
        "full",
        "--out",
        s(&out_path),
        s(&f.path("corpus")),
    ]);
    let text = fs::read_to_string(&out_path).unwrap();
    let model = bundle::load(&f.path("m.tsm")).unwrap();
    let tables = corpus::load_corpus(&f.path("corpus")).unwrap().tables;
    let inputs = prepare_inputs(&model, &tables, true).unwrap();
    let classifier = model.classifier_topic.as_ref().unwrap();
    let crf = model.crf_topic.as_ref().unwrap();
    let mut expected = Vec::new();
    for table in &inputs {
        let u = unaries(classifier, table).unwrap();
        let path = map_decode(&u, &crf.pairwise).unwrap();
        for (&column, ty) in table.column_indices.iter().zip(path) {
            expected.push(format!(
                "{}\t{column}\t{}",
                table.table_id,
                model.vocabulary.name(ty)
            ));
        }
    }
    let got: Vec<String> = text
        .lines()
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
        .collect();
    assert_eq!(got, expected);
}

#[test]
fn missing_stage_is_named() {
    let f = Fixture::new(60);
    assert!(f.train("m.tsm", "1", &["--skip-crf"]).status.success());
    let out = tabsense(&[
        "predict",
        "--model",
        s(&f.path("m.tsm")),
        "--mode",
        "full",
        s(&f.path("corpus")),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error: missing-stage: "), "{err}");
    assert!(err.contains("crf_topic"), "{err}");
    assert_eq!(err.lines().count(), 1);
    ok(&[
        "predict",
        "--model",
        s(&f.path("m.tsm")),
        "--mode",
        "nostruct",
        s(&f.path("corpus")),
    ]);

    assert!(f.train("n.tsm", "1", &["--skip-lda"]).status.success());
    let out = tabsense(&[
        "predict",
        "--model",
        s(&f.path("n.tsm")),
        "--mode",
        "nostruct",
        s(&f.path("corpus")),
    ]);
    assert!(stderr(&out).starts_with("error: missing-stage: "));
    ok(&[
        "predict",
        "--model",
        s(&f.path("n.tsm")),
        "--mode",
        "notopic",
        s(&f.path("corpus")),
    ]);
}

#[test]
fn evaluate_writes_reports() {
    let f = Fixture::new(60);
    assert!(f.train("m.tsm", "1", &["--fold", "0"]).status.success());
    let out = ok(&[
        "evaluate",
        "--model",
        s(&f.path("m.tsm")),
        s(&f.path("data/manifest.txt")),
        "--fold",
        "0",
        "--importance",
        "--config",
        s(&f.path("config.txt")),
        "--out",
        s(&f.path("eval")),
    ]);
    let report = fs::read_to_string(f.path("eval/report.tsv")).unwrap();
    assert!(report.starts_with("type\tprecision\trecall\tf1\tsupport\n"));
    let support: usize = report
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(support, 20 * 3);
    let summary = fs::read_to_string(f.path("eval/summary.json")).unwrap();
    assert!(summary.contains("\"macro_f1\""));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        summary.trim()
    );
    let importance = fs::read_to_string(f.path("eval/importance.tsv")).unwrap();
    assert_eq!(importance.lines().count(), 6);

    let out = tabsense(&[
        "evaluate",
        "--model",
        s(&f.path("m.tsm")),
        s(&f.path("data/manifest.txt")),
        "--fold",
        "9",
        "--out",
        s(&f.path("eval")),
    ]);
    assert!(stderr(&out).starts_with("error: invalid-argument: "));
}

#[test]
fn ablate_reports_four_variants() {
    let f = Fixture::new(45);
    let out = ok(&[
        "ablate",
        s(&f.path("data/manifest.txt")),
        "--config",
        s(&f.path("config.txt")),
        "--out",
        s(&f.path("ablation")),
    ]);
    let table = fs::read_to_string(f.path("ablation/ablation.tsv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), table);
    let variants: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(variants, ["Base", "Sato_noTopic", "Sato_noStruct", "Sato"]);
    let per_fold = fs::read_to_string(f.path("ablation/folds.tsv")).unwrap();
    assert_eq!(per_fold.lines().count(), 1 + 3 * 4);
    assert!(f.path("ablation/delta_topic.tsv").exists());
    assert!(f.path("ablation/delta_struct.tsv").exists());
}

#[test]
fn inspect_topics_ranks_every_topic() {
    let f = Fixture::new(60);
    assert!(f.train("m.tsm", "1", &[]).status.success());
    let out = ok(&["inspect-topics", "--model", s(&f.path("m.tsm")), "--k", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "topic\tscore\ttypes");
    assert_eq!(rows.len(), 1 + 4);
    let scores: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows[1..]
        .iter()
        .all(|r| r.split('\t').nth(2).unwrap().split(',').count() == 2));
}

#[test]
fn errors_are_one_machine_parseable_line() {
    let f = Fixture::new(30);
    assert!(f.train("m.tsm", "1", &[]).status.success());
    let mut bytes = fs::read(f.path("m.tsm")).unwrap();
    bytes[8] = 9;
    fs::write(f.path("v9.tsm"), &bytes).unwrap();
    let out = tabsense(&[
        "predict",
        "--model",
        s(&f.path("v9.tsm")),
        s(&f.path("corpus")),
    ]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).starts_with("error: unsupported-version: "),
        "{}",
        stderr(&out)
    );

    fs::write(f.path("bad.txt"), "epochs = 3\nno_such_key = 1\n").unwrap();
    let out = tabsense(&[
        "ingest",
        s(&f.path("corpus")),
        "--out",
        s(&f.path("x")),
        "--config",
        s(&f.path("bad.txt")),
    ]);
    assert!(
        stderr(&out).starts_with("error: config: "),
        "{}",
        stderr(&out)
    );

    let out = tabsense(&[
        "predict",
        "--model",
        s(&f.path("nope.tsm")),
        s(&f.path("corpus")),
    ]);
    assert!(!out.status.success());
    assert_eq!(stderr(&out).lines().count(), 1);
}
