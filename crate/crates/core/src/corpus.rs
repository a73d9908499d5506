//! Table corpora: ingestion, header-derived labels, the type vocabulary,
//! co-occurrence statistics and cross-validation folds.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Index of a semantic type inside a [`TypeVocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(pub usize);

impl TypeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub header_raw: String,
    pub cells: Vec<String>,
    pub label: Option<TypeId>,
}

impl Column {
    pub fn new(header_raw: impl Into<String>, cells: Vec<String>) -> Self {
        Column {
            header_raw: header_raw.into(),
            cells,
            label: None,
        }
    }

    pub fn with_label(mut self, label: TypeId) -> Self {
        self.label = Some(label);
        self
    }
}

/// An ordered sequence of columns sharing a row count.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub id: String,
    pub columns: Vec<Column>,
    pub provenance: Option<String>,
}

impl Table {
    /// Validates the column set. Ragged columns are truncated to the shortest
    /// one; a table whose shortest column is empty is rejected.
    pub fn new(id: impl Into<String>, mut columns: Vec<Column>) -> Result<Self> {
        let id = id.into();
        if columns.is_empty() {
            return Err(Error::MalformedTable {
                path: PathBuf::from(&id),
                reason: "table has no columns".into(),
            });
        }
        let rows = columns.iter().map(|c| c.cells.len()).min().unwrap_or(0);
        if rows == 0 {
            return Err(Error::MalformedTable {
                path: PathBuf::from(&id),
                reason: "table has an empty column".into(),
            });
        }
        for column in &mut columns {
            column.cells.truncate(rows);
        }
        Ok(Table {
            id,
            columns,
            provenance: None,
        })
    }

    pub fn row_count(&self) -> usize {
        self.columns[0].cells.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.columns.iter().filter(|c| c.label.is_some()).count()
    }

    /// Gold labels when every column carries one.
    pub fn gold_labels(&self) -> Option<Vec<TypeId>> {
        self.columns.iter().map(|c| c.label).collect()
    }

    /// The table restricted to its labeled columns, in their original order.
    pub fn labeled_view(&self) -> Option<Table> {
        let columns: Vec<Column> = self
            .columns
            .iter()
            .filter(|c| c.label.is_some())
            .cloned()
            .collect();
        if columns.is_empty() {
            return None;
        }
        Some(Table {
            id: self.id.clone(),
            columns,
            provenance: self.provenance.clone(),
        })
    }
}

/// Splits one whitespace-delimited word at every uppercase character that
/// follows a non-uppercase one, so that camel-cased input splits the same way
/// as spaced input.
fn split_case_boundaries(word: &str, out: &mut Vec<String>) {
    let mut current = String::new();
    let mut prev_upper = true;
    for ch in word.chars() {
        let upper = ch.is_uppercase();
        if upper && !prev_upper && !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        current.push(ch);
        prev_upper = upper;
    }
    if !current.is_empty() {
        out.push(current);
    }
}

fn capitalize(token: &str, out: &mut String) {
    let mut chars = token.chars();
    if let Some(first) = chars.next() {
        let mut upper = first.to_uppercase();
        match (upper.next(), upper.next()) {
            (Some(u), None) if u.is_uppercase() => out.push(u),
            _ => out.push(first),
        }
        out.extend(chars.flat_map(char::to_lowercase));
    }
}

fn canonicalize_once(raw: &str) -> String {
    let mut stripped = String::with_capacity(raw.len());
    let mut depth = 0usize;
    for ch in raw.chars() {
        match ch {
            '(' => depth += 1,
            ')' if depth > 0 => depth -= 1,
            _ if depth == 0 => stripped.push(ch),
            _ => {}
        }
    }
    let mut tokens = Vec::new();
    for word in stripped.split_whitespace() {
        split_case_boundaries(word, &mut tokens);
    }
    let mut out = String::with_capacity(stripped.len());
    for (i, token) in tokens.iter().enumerate() {
        if i == 0 {
            out.extend(token.chars().flat_map(char::to_lowercase));
        } else {
            capitalize(token, &mut out);
        }
    }
    out
}

/// Canonical form of a column header: parenthesized content removed, words
/// camel-cased with a lowercase first word, no separators.
///
/// Word boundaries are whitespace and lower-to-upper case transitions, which
/// makes the mapping idempotent. A handful of exotic Unicode case mappings need
/// more than one pass to settle; the loop iterates to the fixed point.
pub fn canonicalize_header(raw: &str) -> String {
    let mut current = canonicalize_once(raw);
    for _ in 0..8 {
        let next = canonicalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Ordered set of canonical type labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeVocabulary {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
}

impl TypeVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyVocabulary("no type names given".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || canonicalize_header(name) != *name {
                return Err(Error::InvalidArgument(format!(
                    "type name {name:?} is not in canonical form"
                )));
            }
            if index.insert(name.clone(), TypeId(i)).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate type name {name:?}"
                )));
            }
        }
        Ok(TypeVocabulary { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: TypeId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, canonical: &str) -> Option<TypeId> {
        self.index.get(canonical).copied()
    }

    /// Label for a raw header, if its canonical form is a vocabulary member.
    pub fn label_for_header(&self, raw: &str) -> Option<TypeId> {
        self.get(&canonicalize_header(raw))
    }

    /// One name per line, each terminated by `\n`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Err(Error::EmptyVocabulary("vocabulary file is empty".into()));
        }
        Self::new(body.split('\n').map(str::to_owned).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// A file that could not be turned into a table.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipRecord {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub tables: Vec<Table>,
    pub skipped: Vec<SkipRecord>,
}

/// Parses one CSV table; the first record is the header row.
pub fn parse_csv_table(id: impl Into<String>, data: &[u8]) -> Result<Table> {
    let id = id.into();
    let malformed = |reason: String| Error::MalformedTable {
        path: PathBuf::from(&id),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(data);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(malformed("missing header row".into()));
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        for (j, field) in record.iter().enumerate().take(headers.len()) {
            cells[j].push(field.trim().to_owned());
        }
    }
    let columns = headers
        .into_iter()
        .zip(cells)
        .map(|(h, c)| Column::new(h, c))
        .collect();
    Table::new(id.clone(), columns).map_err(|e| match e {
        Error::MalformedTable { reason, .. } => malformed(reason),
        other => other,
    })
}

pub fn read_table(path: &Path, id: impl Into<String>) -> Result<Table> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut table = parse_csv_table(id, &data).map_err(|e| match e {
        Error::MalformedTable { reason, .. } => Error::MalformedTable {
            path: path.to_owned(),
            reason,
        },
        other => other,
    })?;
    table.provenance = Some(path.display().to_string());
    Ok(table)
}

fn collect_csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_csv_files(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn table_id_for(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Paths listed in a manifest, resolved relative to the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Loads every table under a directory (recursively, `*.csv`) or listed in a
/// manifest file. Files are visited in lexicographic path order; unreadable
/// or malformed files are skipped and reported.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_owned()));
    }
    let (root, mut files) = if path.is_dir() {
        let mut files = Vec::new();
        collect_csv_files(path, &mut files)?;
        (path.to_owned(), files)
    } else {
        let files = read_manifest(path)?;
        (path.parent().unwrap_or(Path::new(".")).to_owned(), files)
    };
    files.sort();
    files.dedup();

    let results: Vec<_> = files
        .par_iter()
        .map(|file| read_table(file, table_id_for(file, &root)))
        .collect();

    let mut corpus = LoadedCorpus::default();
    for (file, result) in files.into_iter().zip(results) {
        match result {
            Ok(table) => corpus.tables.push(table),
            Err(err) => {
                log::warn!("skipping {}: {err}", file.display());
                corpus.skipped.push(SkipRecord {
                    path: file,
                    reason: err.to_string(),
                });
            }
        }
    }
    Ok(corpus)
}

/// Sets each column's label from its canonicalized header; columns outside
/// the vocabulary get no label.
pub fn apply_labels(tables: &mut [Table], vocab: &TypeVocabulary) {
    for column in tables.iter_mut().flat_map(|t| t.columns.iter_mut()) {
        column.label = vocab.label_for_header(&column.header_raw);
    }
}

/// Canonical header labels with at least `min_support` columns, most frequent
/// first, ties in lexicographic order.
pub fn build_vocabulary(tables: &[Table], min_support: usize) -> Result<TypeVocabulary> {
    if min_support == 0 {
        return Err(Error::InvalidArgument(
            "min_support must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for column in tables.iter().flat_map(|t| &t.columns) {
        let canonical = canonicalize_header(&column.header_raw);
        if !canonical.is_empty() {
            *counts.entry(canonical).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_support)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary(format!(
            "no header reaches min_support={min_support}"
        )));
    }
    TypeVocabulary::new(kept.into_iter().map(|(name, _)| name).collect())
}

/// Tables with at least two labeled columns, order preserved.
pub fn filter_multicolumn(tables: &[Table]) -> Vec<Table> {
    tables
        .iter()
        .filter(|t| t.labeled_count() >= 2)
        .cloned()
        .collect()
}

/// Symmetric per-table type co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn zeros(n: usize) -> Self {
        CooccurrenceMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    fn bump(&mut self, i: usize, j: usize) {
        self.counts[i * self.n + j] += 1;
        if i != j {
            self.counts[j * self.n + i] += 1;
        }
    }
}

/// `counts[i][j]` is the number of tables holding a column of type `i` and a
/// distinct column of type `j`. Each table contributes at most once per pair.
pub fn cooccurrence(tables: &[Table], vocab: &TypeVocabulary) -> CooccurrenceMatrix {
    let n = vocab.len();
    let mut matrix = CooccurrenceMatrix::zeros(n);
    let mut per_table = vec![0usize; n];
    for table in tables {
        per_table.iter_mut().for_each(|c| *c = 0);
        for label in table.columns.iter().filter_map(|c| c.label) {
            per_table[label.0] += 1;
        }
        let present: Vec<usize> = (0..n).filter(|&i| per_table[i] > 0).collect();
        for (a, &i) in present.iter().enumerate() {
            if per_table[i] >= 2 {
                matrix.bump(i, i);
            }
            for &j in &present[a + 1..] {
                matrix.bump(i, j);
            }
        }
    }
    matrix
}

/// Assignment of every table to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    k: usize,
    fold_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Test fold of each table, aligned with the table list.
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn split(&self, fold: usize) -> FoldSplit {
        let (test, train) = (0..self.fold_of.len()).partition(|&i| self.fold_of[i] == fold);
        FoldSplit { train, test }
    }

    pub fn splits(&self) -> Vec<FoldSplit> {
        (0..self.k).map(|f| self.split(f)).collect()
    }

    /// Lines of `<fold_index>\t<table_id>` in table order.
    pub fn to_text(&self, tables: &[Table]) -> String {
        let mut out = String::new();
        for (table, fold) in tables.iter().zip(&self.fold_of) {
            out.push_str(&format!("{fold}\t{}\n", table.id));
        }
        out
    }

    pub fn from_text(text: &str, tables: &[Table]) -> Result<Self> {
        let position: HashMap<&str, usize> = tables
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect();
        let mut fold_of = vec![usize::MAX; tables.len()];
        let mut k = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Config {
                line: lineno + 1,
                reason: reason.to_owned(),
            };
            let (fold, id) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected <fold>\\t<id>"))?;
            let fold: usize = fold
                .parse()
                .map_err(|_| bad("fold index is not an integer"))?;
            let &i = position.get(id).ok_or_else(|| bad("unknown table id"))?;
            fold_of[i] = fold;
            k = k.max(fold + 1);
        }
        if fold_of.contains(&usize::MAX) {
            return Err(Error::InvalidArgument(
                "fold file does not cover every table".into(),
            ));
        }
        Ok(Folds { k, fold_of })
    }
}

/// Seeded table-level `k`-fold partition: tables are shuffled and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn split_folds(tables: &[Table], k: usize, seed: u64) -> Result<Folds> {
    if k < 2 {
        return Err(Error::InvalidArgument(
            "fold count must be at least 2".into(),
        ));
    }
    if tables.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} tables cannot fill {k} folds",
            tables.len()
        )));
    }
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; tables.len()];
    for (position, &table) in order.iter().enumerate() {
        fold_of[table] = position % k;
    }
    Ok(Folds { k, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(id: &str, headers: &[&str]) -> Table {
        let columns = headers
            .iter()
            .map(|h| Column::new(*h, vec!["x".into()]))
            .collect();
        Table::new(id, columns).unwrap()
    }

    fn labeled(id: &str, labels: &[usize]) -> Table {
        let columns = labels
            .iter()
            .map(|&l| Column::new("", vec!["x".into()]).with_label(TypeId(l)))
            .collect();
        Table::new(id, columns).unwrap()
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(canonicalize_header("YEAR"), "year");
        assert_eq!(canonicalize_header("Year"), "year");
        assert_eq!(canonicalize_header("year (first occurrence)"), "year");
        assert_eq!(canonicalize_header("birth place (country)"), "birthPlace");
        assert_eq!(canonicalize_header(""), "");
        assert_eq!(canonicalize_header("  (only parens) "), "");
        assert_eq!(canonicalize_header("birthPlace"), "birthPlace");
        assert_eq!(canonicalize_header("BIRTH PLACE"), "birthPlace");
    }

    #[test]
    fn nested_parentheses_removed() {
        assert_eq!(canonicalize_header("a (b (c) d) e"), "aE");
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(s in any::<String>()) {
            let once = canonicalize_header(&s);
            prop_assert_eq!(canonicalize_header(&once), once);
        }

        #[test]
        fn cooccurrence_is_symmetric(
            tables in prop::collection::vec(prop::collection::vec(0usize..4, 1..6), 0..12)
        ) {
            let tables: Vec<Table> = tables
                .iter()
                .enumerate()
                .map(|(i, l)| labeled(&i.to_string(), l))
                .collect();
            let vocab = TypeVocabulary::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
            let m = cooccurrence(&tables, &vocab);
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j) <= tables.len() as u64);
                }
            }
        }
    }

    #[test]
    fn ragged_table_truncated() {
        let t = Table::new(
            "t",
            vec![
                Column::new("a", vec!["1".into(), "2".into(), "3".into()]),
                Column::new("b", vec!["x".into(), "y".into()]),
            ],
        )
        .unwrap();
        assert_eq!(t.row_count(), 2);
        assert_eq!(t.columns[0].cells, vec!["1", "2"]);
    }

    #[test]
    fn empty_column_rejected() {
        assert!(Table::new("t", vec![Column::new("a", vec![])]).is_err());
        assert!(Table::new("t", vec![]).is_err());
    }

    #[test]
    fn csv_parse_trims_and_keeps_case() {
        let t = parse_csv_table("t", b"City , State\n Paris ,\"Ile, de\"\nLyon,Rhone\n").unwrap();
        assert_eq!(t.columns.len(), 2);
        assert_eq!(t.columns[0].header_raw, "City");
        assert_eq!(t.columns[0].cells, vec!["Paris", "Lyon"]);
        assert_eq!(t.columns[1].cells, vec!["Ile, de", "Rhone"]);
    }

    #[test]
    fn header_only_csv_rejected() {
        assert!(matches!(
            parse_csv_table("t", b"a,b\n"),
            Err(Error::MalformedTable { .. })
        ));
    }

    #[test]
    fn vocabulary_by_support() {
        let mut tables = Vec::new();
        for i in 0..5 {
            tables.push(table(&format!("c{i}"), &["City"]));
        }
        tables.push(table("z", &["zzz"]));
        let vocab = build_vocabulary(&tables, 2).unwrap();
        assert_eq!(vocab.names(), ["city"]);
        assert!(build_vocabulary(&tables, 10).is_err());
        assert!(build_vocabulary(&tables, 0).is_err());
    }

    #[test]
    fn vocabulary_min_support_one() {
        let tables = vec![table("1", &["a", "a"]), table("2", &["b"])];
        let vocab = build_vocabulary(&tables, 1).unwrap();
        assert_eq!(vocab.names(), ["a", "b"]);
        for (i, name) in vocab.names().iter().enumerate() {
            assert_eq!(vocab.get(name), Some(TypeId(i)));
        }
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let vocab = TypeVocabulary::new(vec!["city".into(), "birthPlace".into()]).unwrap();
        let text = vocab.to_text();
        assert_eq!(text, "city\nbirthPlace\n");
        assert_eq!(TypeVocabulary::from_text(&text).unwrap(), vocab);
        assert!(TypeVocabulary::new(vec!["Birth Place".into()]).is_err());
        assert!(TypeVocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn multicolumn_filter() {
        let tables = vec![labeled("one", &[0]), labeled("three", &[0, 1, 2])];
        let kept = filter_multicolumn(&tables);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "three");
        assert!(filter_multicolumn(&tables[..1]).is_empty());
    }

    #[test]
    fn cooccurrence_examples() {
        let vocab = TypeVocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let m = cooccurrence(&[labeled("t", &[0, 1])], &vocab);
        assert_eq!((m.get(0, 1), m.get(1, 0), m.get(0, 0)), (1, 1, 0));

        let m = cooccurrence(&[labeled("t", &[0, 0])], &vocab);
        assert_eq!(m.get(0, 0), 1);

        let tables = [
            labeled("1", &[0, 1]),
            labeled("2", &[0, 1]),
            labeled("3", &[0, 2]),
        ];
        let m = cooccurrence(&tables, &vocab);
        assert_eq!((m.get(0, 1), m.get(0, 2), m.get(1, 2)), (2, 1, 0));

        // three columns of one type still count once for the table
        let m = cooccurrence(&[labeled("t", &[2, 2, 2])], &vocab);
        assert_eq!(m.get(2, 2), 1);
    }

    #[test]
    fn folds_partition_and_determinism() {
        let tables: Vec<Table> = (0..10).map(|i| table(&format!("t{i}"), &["a"])).collect();
        let folds = split_folds(&tables, 5, 7).unwrap();
        assert_eq!(folds, split_folds(&tables, 5, 7).unwrap());
        let mut seen = vec![0; tables.len()];
        for split in folds.splits() {
            assert_eq!((split.train.len(), split.test.len()), (8, 2));
            for &i in &split.test {
                seen[i] += 1;
                assert!(!split.train.contains(&i));
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert!(split_folds(&tables[..3], 5, 7).is_err());
        assert!(split_folds(&tables, 1, 7).is_err());

        let text = folds.to_text(&tables);
        assert_eq!(Folds::from_text(&text, &tables).unwrap(), folds);
    }
}
