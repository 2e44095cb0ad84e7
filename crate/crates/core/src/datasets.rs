//! Corpus ingestion, deterministic splits, and summary statistics.
//!
//! The canonical on-disk form is UTF-8 TSV, one `label<TAB>text` record
//! per line with `-` for unlabeled rows. Heterogeneous source formats
//! (the CSV layouts the public corpora ship in) are adapted through a
//! small ingestion descriptor instead of per-corpus code.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textproc::{Preprocessor, RawTweet};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<RawTweet>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<RawTweet>) -> Self {
        Dataset {
            name: name.into(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples paired with their labels; errors on unlabeled rows.
    pub fn labeled(&self) -> Result<Vec<(&RawTweet, usize)>> {
        self.examples
            .iter()
            .map(|t| {
                t.label.map(|l| (t, l)).ok_or_else(|| {
                    Error::Contract(format!("unlabeled example {:?} in {}", t.text, self.name))
                })
            })
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.examples
            .iter()
            .filter_map(|t| t.label)
            .max()
            .map_or(0, |m| m + 1)
    }
}

/// Column mapping for non-canonical delimited sources.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaDescriptor {
    pub delimiter: u8,
    pub has_header: bool,
    pub text_col: usize,
    pub label_col: usize,
    /// Source label value -> class index; empty means "parse as integer
    /// or `-`".
    pub label_map: Vec<(String, usize)>,
}

impl Default for SchemaDescriptor {
    fn default() -> Self {
        SchemaDescriptor {
            delimiter: b'\t',
            has_header: false,
            text_col: 1,
            label_col: 0,
            label_map: Vec::new(),
        }
    }
}

impl SchemaDescriptor {
    /// Parses `key = value` lines: `delimiter` (a literal character or
    /// `tab`), `has_header`, `text_col`, `label_col`, and `label_map`
    /// as comma-separated `from:to` pairs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = SchemaDescriptor::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<descriptor>".into(),
                line: lineno + 1,
                message: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |message: String| Error::Parse {
                path: "<descriptor>".into(),
                line: lineno + 1,
                message,
            };
            match key {
                "delimiter" => {
                    schema.delimiter = match value {
                        "tab" | "\\t" => b'\t',
                        v if v.len() == 1 => v.as_bytes()[0],
                        v => return Err(bad(format!("bad delimiter {v:?}"))),
                    }
                }
                "has_header" => {
                    schema.has_header =
                        value.parse().map_err(|_| bad(format!("bad boolean {value:?}")))?
                }
                "text_col" => {
                    schema.text_col =
                        value.parse().map_err(|_| bad(format!("bad column {value:?}")))?
                }
                "label_col" => {
                    schema.label_col =
                        value.parse().map_err(|_| bad(format!("bad column {value:?}")))?
                }
                "label_map" => {
                    schema.label_map = value
                        .split(',')
                        .map(|pair| {
                            let (from, to) = pair
                                .split_once(':')
                                .ok_or_else(|| bad(format!("bad mapping {pair:?}")))?;
                            let to = to
                                .trim()
                                .parse()
                                .map_err(|_| bad(format!("bad class index in {pair:?}")))?;
                            Ok((from.trim().to_string(), to))
                        })
                        .collect::<Result<_>>()?;
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn map_label(&self, raw: &str, path: &str, line: usize) -> Result<Option<usize>> {
        let raw = raw.trim();
        if let Some((_, class)) = self.label_map.iter().find(|(from, _)| from == raw) {
            return Ok(Some(*class));
        }
        if !self.label_map.is_empty() {
            return Err(Error::Label {
                path: path.to_string(),
                line,
                value: raw.to_string(),
            });
        }
        if raw == "-" {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(|_| Error::Label {
            path: path.to_string(),
            line,
            value: raw.to_string(),
        })
    }
}

/// Loads the canonical two-column TSV. Rows with any other column count
/// are rejected with their line number.
pub fn load_tsv(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let file = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: display,
                line: lineno + 1,
                message: format!("expected 2 tab-separated columns, found {}", fields.len()),
            });
        }
        let schema = SchemaDescriptor::default();
        let label = schema.map_label(fields[0], &display, lineno + 1)?;
        let tweet = RawTweet::new(fields[1], label).map_err(|_| Error::Parse {
            path: display.clone(),
            line: lineno + 1,
            message: "empty text".into(),
        })?;
        examples.push(tweet);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset::new(name, examples))
}

/// Loads a delimited source through an ingestion descriptor.
pub fn load_with_schema(path: &Path, schema: &SchemaDescriptor) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize, what: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                path: display.clone(),
                line,
                message: format!("missing {what} column {col}"),
            })
        };
        let label = schema.map_label(field(schema.label_col, "label")?, &display, line)?;
        let text = field(schema.text_col, "text")?;
        let tweet = RawTweet::new(text, label).map_err(|_| Error::Parse {
            path: display.clone(),
            line,
            message: "empty text".into(),
        })?;
        examples.push(tweet);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset::new(name, examples))
}

/// Writes the canonical TSV form.
pub fn save_tsv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for tweet in &dataset.examples {
        match tweet.label {
            Some(l) => writeln!(w, "{l}\t{}", tweet.text)?,
            None => writeln!(w, "-\t{}", tweet.text)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Seeded shuffle-and-split: `round(fraction * N)` examples (half-up)
/// become the dev set, the rest stay in train.
pub fn split_dev(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Contract(format!(
            "dev fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let n_dev = (fraction * n as f64 + 0.5).floor() as usize;
    if n_dev == 0 || n_dev >= n {
        return Err(Error::Contract(format!(
            "dev split of {n} examples at fraction {fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    let dev: Vec<RawTweet> = order[..n_dev]
        .iter()
        .map(|&i| dataset.examples[i].clone())
        .collect();
    let train: Vec<RawTweet> = order[n_dev..]
        .iter()
        .map(|&i| dataset.examples[i].clone())
        .collect();
    Ok((
        Dataset::new(format!("{}-train", dataset.name), train),
        Dataset::new(format!("{}-dev", dataset.name), dev),
    ))
}

/// Fisher-Yates with a caller-owned generator, so every shuffle in the
/// crate draws from the same reproducible stream discipline.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Summary statistics in the usual corpus-table layout.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    /// Tweets surviving preprocessing.
    pub n: usize,
    /// Distinct labels present.
    pub classes: usize,
    /// Maximum sentence length in tokens (l_w).
    pub max_sentence_len: usize,
    /// Maximum word length in characters (l_c).
    pub max_word_len: usize,
    /// Distinct tokens (|V_w|).
    pub word_alphabet: usize,
    /// Distinct characters (|V_c|).
    pub char_alphabet: usize,
    /// Tweets dropped because nothing survived preprocessing.
    pub dropped: usize,
}

/// Statistics computed after normalization, and after the semantic
/// rules when `after_rules` is set.
pub fn compute_stats(dataset: &Dataset, preproc: &Preprocessor, after_rules: bool) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut labels = HashSet::new();
    let mut words = HashSet::new();
    let mut chars = HashSet::new();
    for tweet in &dataset.examples {
        let Ok(processed) = preproc.preprocess(tweet, after_rules) else {
            stats.dropped += 1;
            continue;
        };
        let Ok(sentence) = preproc.tokenize(&processed.text) else {
            stats.dropped += 1;
            continue;
        };
        stats.n += 1;
        if let Some(label) = tweet.label {
            labels.insert(label);
        }
        stats.max_sentence_len = stats.max_sentence_len.max(sentence.len());
        for token in &sentence.tokens {
            stats.max_word_len = stats.max_word_len.max(token.chars().count());
            words.insert(token.clone());
            chars.extend(token.chars());
        }
    }
    stats.classes = labels.len();
    stats.word_alphabet = words.len();
    stats.char_alphabet = chars.len();
    stats
}
