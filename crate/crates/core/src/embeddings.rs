//! Vocabularies, pretrained word vectors, and sentence indexing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{real, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::textproc::TokenizedSentence;

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_SYMBOL: &str = "<pad>";
pub const UNK_SYMBOL: &str = "<unk>";

/// Range of the uniform distribution used for out-of-vocabulary and
/// randomly initialized embedding rows.
pub const OOV_INIT_RANGE: f64 = 0.25;

/// Bidirectional symbol/index map with reserved padding (0) and
/// unknown (1) entries; iteration follows insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_SYMBOL);
        v.insert(UNK_SYMBOL);
        v
    }

    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&i) = self.index.get(symbol) {
            return i;
        }
        let i = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), i);
        i
    }

    /// Index of `symbol`, or the unknown index for unseen symbols.
    pub fn lookup(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK_INDEX)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    /// Total entries including the two reserved slots.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(String::as_str)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{i}\t{s}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: BufRead>(r: R, path: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (idx, symbol) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: "expected index<TAB>symbol".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: format!("bad index {idx:?}"),
            })?;
            if idx != symbols.len() {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("index {idx} out of order"),
                });
            }
            symbols.push(symbol.to_string());
        }
        if symbols.first().map(String::as_str) != Some(PAD_SYMBOL)
            || symbols.get(1).map(String::as_str) != Some(UNK_SYMBOL)
        {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: "missing reserved <pad>/<unk> entries".into(),
            });
        }
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Vocab { symbols, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Builds the word vocabulary (tokens with frequency >= `min_count`)
/// and the character vocabulary (every character of every token) from a
/// tokenized corpus.
pub fn build_vocabs(
    corpus: &[TokenizedSentence],
    min_count: usize,
) -> Result<(Vocab, Vocab)> {
    if corpus.is_empty() {
        return Err(Error::Contract("vocabularies need a non-empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    let mut chars = Vocab::new();
    for sentence in corpus {
        for token in &sentence.tokens {
            let count = counts.entry(token).or_insert(0);
            if *count == 0 {
                first_seen.push(token);
            }
            *count += 1;
            for ch in token.chars() {
                chars.insert(&ch.to_string());
            }
        }
    }
    let mut words = Vocab::new();
    for token in first_seen {
        if counts[token] >= min_count {
            words.insert(token);
        }
    }
    Ok((words, chars))
}

/// Where each embedding row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowOrigin {
    Padding,
    Pretrained,
    Random,
}

/// Word embedding table, one row per vocabulary entry.
#[derive(Clone, Debug)]
pub struct WordEmbeddings<F> {
    pub matrix: Tensor<F>,
    pub origins: Vec<RowOrigin>,
    /// Fraction of non-reserved vocabulary words found in the file.
    pub coverage: f64,
}

/// Loads word vectors in the plain-text format `token v1 ... v_dim`
/// (one entry per line, optionally gzip-compressed when the path ends
/// in `.gz`). File tokens are matched case-insensitively against the
/// vocabulary; the first file entry for a word wins. Words without a
/// pretrained vector get uniform values in +-0.25 drawn from `seed`.
pub fn load_pretrained<F: Scalar>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<WordEmbeddings<F>> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let display = path.display().to_string();
    read_pretrained(BufReader::new(reader), &display, vocab, dim, seed)
}

pub fn read_pretrained<F: Scalar, R: BufRead>(
    reader: R,
    path: &str,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<WordEmbeddings<F>> {
    if dim == 0 {
        return Err(Error::shape("load_pretrained", "dim must be positive"));
    }
    let rows = vocab.len();
    let mut data = vec![F::zero(); rows * dim];
    let mut origins = vec![RowOrigin::Random; rows];
    origins[PAD_INDEX] = RowOrigin::Padding;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: lineno + 1,
            message: "empty record".into(),
        })?;
        let values: Vec<&str> = fields.collect();
        // word2vec-style "rows dims" header on the first line
        if lineno == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            if let Ok(file_dim) = values[0].parse::<usize>() {
                if file_dim != dim {
                    return Err(Error::shape(
                        "load_pretrained",
                        format!("file declares dim {file_dim}, expected {dim}"),
                    ));
                }
                continue;
            }
        }
        if values.len() != dim {
            return Err(Error::shape(
                "load_pretrained",
                format!("{path}:{} has {} values, expected {dim}", lineno + 1, values.len()),
            ));
        }
        let Some(row) = vocab.get(&token.to_lowercase()).or_else(|| vocab.get(token)) else {
            continue;
        };
        if row == PAD_INDEX || row == UNK_INDEX || origins[row] == RowOrigin::Pretrained {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            let parsed: f64 = v.parse().map_err(|_| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: format!("bad float {v:?}"),
            })?;
            data[row * dim + j] = real(parsed);
        }
        origins[row] = RowOrigin::Pretrained;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in 1..rows {
        if origins[row] == RowOrigin::Pretrained {
            continue;
        }
        for j in 0..dim {
            data[row * dim + j] = real(rng.gen_range(-OOV_INIT_RANGE..OOV_INIT_RANGE));
        }
    }

    let non_reserved = rows.saturating_sub(2);
    let matched = origins
        .iter()
        .filter(|o| **o == RowOrigin::Pretrained)
        .count();
    let coverage = if non_reserved == 0 {
        0.0
    } else {
        matched as f64 / non_reserved as f64
    };
    Ok(WordEmbeddings {
        matrix: Tensor::new(vec![rows, dim], data)?,
        origins,
        coverage,
    })
}

/// A sentence mapped to padded index form. `word_ids` has
/// `max_sent_len` entries and `char_ids` is `max_sent_len` rows of
/// `max_word_len` indices, both padded with 0; true lengths are kept
/// alongside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedSentence {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    /// Token count before truncation.
    pub n_tokens: usize,
    /// Per kept token, its character count before truncation.
    pub char_lens: Vec<usize>,
    max_sent_len: usize,
    max_word_len: usize,
}

impl IndexedSentence {
    /// Tokens actually representable under the sentence-length limit.
    pub fn kept_tokens(&self) -> usize {
        self.n_tokens.min(self.max_sent_len)
    }

    /// Character indices of token `i` up to the word-length limit.
    pub fn word_chars(&self, i: usize) -> &[usize] {
        let len = self.char_lens[i].min(self.max_word_len);
        &self.char_ids[i][..len]
    }
}

pub fn index_sentence(
    sentence: &TokenizedSentence,
    words: &Vocab,
    chars: &Vocab,
    max_word_len: usize,
    max_sent_len: usize,
) -> Result<IndexedSentence> {
    if max_word_len == 0 || max_sent_len == 0 {
        return Err(Error::Contract("index limits must be at least 1".into()));
    }
    let n_tokens = sentence.tokens.len();
    let kept = n_tokens.min(max_sent_len);
    let mut word_ids = vec![PAD_INDEX; max_sent_len];
    let mut char_ids = vec![vec![PAD_INDEX; max_word_len]; max_sent_len];
    let mut char_lens = Vec::with_capacity(kept);
    for (i, token) in sentence.tokens.iter().take(kept).enumerate() {
        word_ids[i] = words.lookup(token);
        let mut count = 0;
        for (j, ch) in token.chars().enumerate() {
            count += 1;
            if j < max_word_len {
                char_ids[i][j] = chars.lookup(&ch.to_string());
            }
        }
        char_lens.push(count);
    }
    Ok(IndexedSentence {
        word_ids,
        char_ids,
        n_tokens,
        char_lens,
        max_sent_len,
        max_word_len,
    })
}
