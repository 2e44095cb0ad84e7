//! Run configuration: a flat `key = value` file merged with
//! command-line overrides, then validated before anything runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tweetnet::error::{Error, Result};
use tweetnet::model::ModelConfig;
use tweetnet::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingChoice {
    Glove200,
    Word2Vec300,
    Random,
}

impl EmbeddingChoice {
    /// Word dimension implied by the choice, if any.
    fn implied_dim(self) -> Option<usize> {
        match self {
            EmbeddingChoice::Glove200 => Some(200),
            EmbeddingChoice::Word2Vec300 => Some(300),
            EmbeddingChoice::Random => None,
        }
    }
}

impl std::fmt::Display for EmbeddingChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingChoice::Glove200 => "glove200",
            EmbeddingChoice::Word2Vec300 => "word2vec300",
            EmbeddingChoice::Random => "random",
        })
    }
}

impl FromStr for EmbeddingChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glove200" => Ok(EmbeddingChoice::Glove200),
            "word2vec300" => Ok(EmbeddingChoice::Word2Vec300),
            "random" => Ok(EmbeddingChoice::Random),
            other => Err(Error::Config(format!(
                "unknown embeddings choice {other:?} (glove200|word2vec300|random)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!(
                "unknown precision {other:?} (f32|f64)"
            ))),
        }
    }
}

/// Merged view of model and training configuration plus paths and
/// flags; one instance fully determines a run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub emoticons: Option<PathBuf>,
    pub negative_cues: Option<PathBuf>,
    pub stopword_list: Option<PathBuf>,
    pub embeddings: EmbeddingChoice,
    pub precision: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_count: usize,
    pub folds: usize,
    d_word_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            dev_corpus: None,
            schema: None,
            vectors: None,
            out_dir: PathBuf::from("out"),
            emoticons: None,
            negative_cues: None,
            stopword_list: None,
            embeddings: EmbeddingChoice::Random,
            precision: Precision::F64,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            min_count: 1,
            folds: 10,
            d_word_explicit: false,
        }
    }
}

fn parse_on_off(value: &str, key: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(Error::Config(format!("{key} must be on or off, got {other:?}"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults; `#` starts a
    /// comment and unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: bad integer {v:?}")))
        };
        let float = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: bad number {v:?}")))
        };
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "dev_corpus" => self.dev_corpus = Some(PathBuf::from(value)),
            "schema" => self.schema = Some(PathBuf::from(value)),
            "vectors" => self.vectors = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "emoticons" => self.emoticons = Some(PathBuf::from(value)),
            "negative_cues" => self.negative_cues = Some(PathBuf::from(value)),
            "stopword_list" => self.stopword_list = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = value.parse()?,
            "precision" => self.precision = value.parse()?,
            "model_variant" => self.model.variant = value.parse()?,
            "rules" => self.model.apply_rules = parse_on_off(value, key)?,
            "stopwords" => self.model.remove_stopwords = parse_on_off(value, key)?,
            "freeze_word_embeddings" => {
                self.model.freeze_word_embeddings = parse_on_off(value, key)?
            }
            "conv1_window" => self.model.conv1.window = int(value)?,
            "conv1_maps" => self.model.conv1.feature_maps = int(value)?,
            "conv2_window" => self.model.conv2.window = int(value)?,
            "conv2_maps" => self.model.conv2.feature_maps = int(value)?,
            "d_char" => self.model.d_char = int(value)?,
            "d_word" => {
                self.model.d_word = int(value)?;
                self.d_word_explicit = true;
            }
            "lstm_hidden" => self.model.lstm_hidden = int(value)?,
            "num_classes" => self.model.num_classes = int(value)?,
            "dropout" => self.model.dropout = float(value)?,
            "max_word_len" => self.model.max_word_len = int(value)?,
            "max_sent_len" => self.model.max_sent_len = int(value)?,
            "min_count" => self.min_count = int(value)?,
            "k" => self.folds = int(value)?,
            "batch_size" => self.train.batch_size = int(value)?,
            "max_epochs" => self.train.max_epochs = int(value)?,
            "patience" => self.train.patience = int(value)?,
            "adadelta_rho" => self.train.adadelta_rho = float(value)?,
            "adadelta_eps" => self.train.adadelta_eps = float(value)?,
            "l2_max_norm" => self.train.l2_max_norm = float(value)?,
            "seed" => {
                self.train.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: bad integer {value:?}")))?
            }
            "dev_fraction" => self.train.dev_fraction = float(value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Reconciles the embeddings choice with the word dimension and
    /// validates everything a run depends on. `needs_corpus` is set by
    /// commands that read a corpus through the config.
    pub fn finalize(&mut self, needs_corpus: bool) -> Result<()> {
        if let Some(dim) = self.embeddings.implied_dim() {
            if self.d_word_explicit && self.model.d_word != dim {
                return Err(Error::Config(format!(
                    "embeddings = {} implies d_word = {dim}, but d_word = {} was set",
                    self.embeddings, self.model.d_word
                )));
            }
            self.model.d_word = dim;
            match &self.vectors {
                None => {
                    return Err(Error::Config(format!(
                        "embeddings = {} needs a vectors path",
                        self.embeddings
                    )))
                }
                Some(path) if !path.exists() => {
                    return Err(Error::Config(format!(
                        "vectors file {} does not exist",
                        path.display()
                    )))
                }
                Some(_) => {}
            }
        }
        if needs_corpus {
            match &self.corpus {
                None => return Err(Error::Config("no corpus configured".into())),
                Some(path) if !path.exists() => {
                    return Err(Error::Config(format!(
                        "corpus {} does not exist",
                        path.display()
                    )))
                }
                Some(_) => {}
            }
        }
        for (key, path) in [
            ("dev_corpus", &self.dev_corpus),
            ("schema", &self.schema),
            ("emoticons", &self.emoticons),
            ("negative_cues", &self.negative_cues),
            ("stopword_list", &self.stopword_list),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{key} path {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Every setting with defaults materialized, in config-file syntax;
    /// feeding this back in reproduces the run.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        if let Some(v) = path(&self.corpus) {
            kv("corpus", v);
        }
        if let Some(v) = path(&self.dev_corpus) {
            kv("dev_corpus", v);
        }
        if let Some(v) = path(&self.schema) {
            kv("schema", v);
        }
        if let Some(v) = path(&self.vectors) {
            kv("vectors", v);
        }
        kv("out_dir", self.out_dir.display().to_string());
        if let Some(v) = path(&self.emoticons) {
            kv("emoticons", v);
        }
        if let Some(v) = path(&self.negative_cues) {
            kv("negative_cues", v);
        }
        if let Some(v) = path(&self.stopword_list) {
            kv("stopword_list", v);
        }
        kv("embeddings", self.embeddings.to_string());
        kv("precision", self.precision.to_string());
        kv("model_variant", self.model.variant.to_string());
        kv("rules", on_off(self.model.apply_rules));
        kv("stopwords", on_off(self.model.remove_stopwords));
        kv("freeze_word_embeddings", on_off(self.model.freeze_word_embeddings));
        kv("conv1_window", self.model.conv1.window.to_string());
        kv("conv1_maps", self.model.conv1.feature_maps.to_string());
        kv("conv2_window", self.model.conv2.window.to_string());
        kv("conv2_maps", self.model.conv2.feature_maps.to_string());
        kv("d_char", self.model.d_char.to_string());
        kv("d_word", self.model.d_word.to_string());
        kv("lstm_hidden", self.model.lstm_hidden.to_string());
        kv("num_classes", self.model.num_classes.to_string());
        kv("dropout", self.model.dropout.to_string());
        kv("max_word_len", self.model.max_word_len.to_string());
        kv("max_sent_len", self.model.max_sent_len.to_string());
        kv("min_count", self.min_count.to_string());
        kv("k", self.folds.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("max_epochs", self.train.max_epochs.to_string());
        kv("patience", self.train.patience.to_string());
        kv("adadelta_rho", self.train.adadelta_rho.to_string());
        kv("adadelta_eps", self.train.adadelta_eps.to_string());
        kv("l2_max_norm", self.train.l2_max_norm.to_string());
        kv("seed", self.train.seed.to_string());
        kv("dev_fraction", self.train.dev_fraction.to_string());
        out
    }
}

fn on_off(v: bool) -> String {
    (if v { "on" } else { "off" }).to_string()
}
