//! Seeded synthetic corpora for experiments and tests.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{apply_labels, Column, Table, TypeId, TypeVocabulary};
use crate::error::{Error, Result};

const FIRST_NAMES: [&str; 24] = [
    "james",
    "mary",
    "robert",
    "patricia",
    "john",
    "jennifer",
    "michael",
    "linda",
    "david",
    "elizabeth",
    "william",
    "barbara",
    "richard",
    "susan",
    "joseph",
    "jessica",
    "thomas",
    "sarah",
    "carlos",
    "maria",
    "wei",
    "yuki",
    "ahmed",
    "olga",
];

const LAST_NAMES: [&str; 24] = [
    "smith",
    "johnson",
    "williams",
    "brown",
    "jones",
    "garcia",
    "miller",
    "davis",
    "rodriguez",
    "martinez",
    "hernandez",
    "lopez",
    "gonzalez",
    "wilson",
    "anderson",
    "taylor",
    "moore",
    "jackson",
    "martin",
    "lee",
    "chen",
    "tanaka",
    "hassan",
    "petrova",
];

const PLACES: [&str; 40] = [
    "paris",
    "london",
    "berlin",
    "madrid",
    "rome",
    "vienna",
    "prague",
    "warsaw",
    "lisbon",
    "dublin",
    "oslo",
    "stockholm",
    "helsinki",
    "athens",
    "budapest",
    "amsterdam",
    "brussels",
    "zurich",
    "geneva",
    "milan",
    "munich",
    "hamburg",
    "lyon",
    "porto",
    "seville",
    "krakow",
    "boston",
    "chicago",
    "denver",
    "seattle",
    "austin",
    "toronto",
    "montreal",
    "sydney",
    "melbourne",
    "tokyo",
    "osaka",
    "seoul",
    "mumbai",
    "cairo",
];

const COUNTRIES: [&str; 24] = [
    "france",
    "germany",
    "spain",
    "italy",
    "austria",
    "czechia",
    "poland",
    "portugal",
    "ireland",
    "norway",
    "sweden",
    "finland",
    "greece",
    "hungary",
    "netherlands",
    "belgium",
    "switzerland",
    "canada",
    "australia",
    "japan",
    "korea",
    "india",
    "egypt",
    "usa",
];

/// Type names of the ambiguity corpus, in vocabulary order.
pub const AMBIGUITY_TYPES: [&str; 6] = [
    "name",
    "birthPlace",
    "birthDate",
    "city",
    "country",
    "population",
];

/// Raw headers; each canonicalizes to the matching entry of [`AMBIGUITY_TYPES`].
const AMBIGUITY_HEADERS: [&str; 6] = [
    "Name",
    "birth place",
    "Birth Date (dd/mm)",
    "CITY",
    "country",
    "Population",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityConfig {
    pub tables: usize,
    pub min_rows: usize,
    pub max_rows: usize,
    pub seed: u64,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        AmbiguityConfig {
            tables: 2000,
            min_rows: 5,
            max_rows: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tables: Vec<Table>,
    pub vocabulary: TypeVocabulary,
    /// `(table index, column index)` of the column whose values alone
    /// cannot tell its type.
    pub ambiguous: Vec<(usize, usize)>,
}

impl SyntheticCorpus {
    /// The ambiguous column's position within table `index`.
    pub fn ambiguous_column(&self, index: usize) -> Option<usize> {
        self.ambiguous
            .iter()
            .find(|(t, _)| *t == index)
            .map(|&(_, c)| c)
    }
}

fn place_cells(rng: &mut ChaCha8Rng, rows: usize) -> Vec<String> {
    (0..rows)
        .map(|_| PLACES.choose(rng).expect("non-empty").to_string())
        .collect()
}

/// Tables of two kinds with the same place-name column: in person tables
/// (name, birth place, birth date) it is a `birthPlace`, in city tables
/// (city, country, population) a `city`. Both kinds draw place names and
/// row counts from the same distributions, columns are shuffled per table
/// and kinds alternate.
pub fn ambiguity_corpus(config: &AmbiguityConfig) -> Result<SyntheticCorpus> {
    if config.tables == 0 || config.min_rows == 0 || config.max_rows < config.min_rows {
        return Err(Error::InvalidArgument(
            "invalid ambiguity corpus configuration".into(),
        ));
    }
    let vocabulary = TypeVocabulary::new(AMBIGUITY_TYPES.iter().map(|s| s.to_string()).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tables = Vec::with_capacity(config.tables);
    let mut ambiguous = Vec::with_capacity(config.tables);
    for i in 0..config.tables {
        let rows = rng.random_range(config.min_rows..=config.max_rows);
        let person = i % 2 == 0;
        let places = place_cells(&mut rng, rows);
        let mut columns: Vec<(usize, Vec<String>)> = if person {
            let names = (0..rows)
                .map(|_| {
                    format!(
                        "{} {}",
                        FIRST_NAMES.choose(&mut rng).expect("non-empty"),
                        LAST_NAMES.choose(&mut rng).expect("non-empty")
                    )
                })
                .collect();
            let dates = (0..rows)
                .map(|_| {
                    format!(
                        "{:02}/{:02}/{}",
                        rng.random_range(1..=28),
                        rng.random_range(1..=12),
                        rng.random_range(1900..=2005)
                    )
                })
                .collect();
            vec![(0, names), (1, places), (2, dates)]
        } else {
            let countries = (0..rows)
                .map(|_| COUNTRIES.choose(&mut rng).expect("non-empty").to_string())
                .collect();
            let population = (0..rows)
                .map(|_| rng.random_range(5_000u64..9_000_000).to_string())
                .collect();
            vec![(3, places), (4, countries), (5, population)]
        };
        columns.shuffle(&mut rng);
        let place_type = if person { 1 } else { 3 };
        let position = columns
            .iter()
            .position(|(t, _)| *t == place_type)
            .expect("place column");
        ambiguous.push((i, position));
        let columns = columns
            .into_iter()
            .map(|(t, cells)| Column::new(AMBIGUITY_HEADERS[t], cells))
            .collect();
        tables.push(Table::new(
            format!("{}{i:05}", if person { "person" } else { "city" }),
            columns,
        )?);
    }
    apply_labels(&mut tables, &vocabulary);
    debug_assert!(tables.iter().all(|t| t.labeled_count() == 3));
    Ok(SyntheticCorpus {
        tables,
        vocabulary,
        ambiguous,
    })
}

/// Documents over two disjoint vocabularies `x0..x{n-1}` and `y0..y{n-1}`;
/// each document draws all its tokens from one half, halves alternating.
pub fn separable_documents(
    docs: usize,
    words_per_half: usize,
    length: usize,
    seed: u64,
) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|d| {
            let prefix = if d % 2 == 0 { 'x' } else { 'y' };
            (0..length)
                .map(|_| format!("{prefix}{}", rng.random_range(0..words_per_half)))
                .collect()
        })
        .collect()
}

/// Writes each table as `<id>.csv` (header row first) under `dir`.
pub fn write_csv_corpus(dir: &Path, tables: &[Table]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    for table in tables {
        let path = dir.join(format!("{}.csv", table.id));
        let mut writer = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        writer
            .write_record(table.columns.iter().map(|c| c.header_raw.as_str()))
            .map_err(|e| csv_error(&path, e))?;
        for row in 0..table.row_count() {
            writer
                .write_record(table.columns.iter().map(|c| c.cells[row].as_str()))
                .map_err(|e| csv_error(&path, e))?;
        }
        writer
            .flush()
            .map_err(|e| crate::error::Error::io(&path, e))?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::MalformedTable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Gold type of every column, by table.
pub fn gold_sequences(tables: &[Table]) -> Vec<Vec<Option<TypeId>>> {
    tables
        .iter()
        .map(|t| t.columns.iter().map(|c| c.label).collect())
        .collect()
}
