//! The classifier: character-level convolutional word features,
//! concatenated with word embeddings, encoded by a bidirectional
//! peephole LSTM, classified by a softmax layer.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    lstm_step, real, GateNodes, Graph, LstmStepNodes, NodeId, ParamId, ParamStore, RegisterOpts,
    Scalar, Tensor,
};
use crate::embeddings::{index_sentence, IndexedSentence, Vocab, WordEmbeddings, OOV_INIT_RANGE};
use crate::error::{Error, Result};
use crate::textproc::{ListSources, TokenizedSentence};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

/// One wide convolution layer: window size and feature-map count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub window: usize,
    pub feature_maps: usize,
}

/// Which parts of the architecture are active. All four ablations are
/// plain configuration; no code changes involved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelVariant {
    /// Char-CNN features + word embeddings into the Bi-LSTM.
    Combined,
    /// Char-CNN features + word embeddings, max-pooled over tokens.
    DeepCnnOnly,
    /// Word embeddings into the Bi-LSTM, no character features.
    BiLstmOnly,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Combined => "combined",
            ModelVariant::DeepCnnOnly => "deepcnn",
            ModelVariant::BiLstmOnly => "bilstm",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(ModelVariant::Combined),
            "deepcnn" => Ok(ModelVariant::DeepCnnOnly),
            "bilstm" => Ok(ModelVariant::BiLstmOnly),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub conv1: ConvLayerSpec,
    pub conv2: ConvLayerSpec,
    pub d_char: usize,
    pub d_word: usize,
    pub lstm_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub max_word_len: usize,
    pub max_sent_len: usize,
    /// Preprocessing recorded with the model so prediction replays the
    /// exact training-time pipeline.
    pub apply_rules: bool,
    pub remove_stopwords: bool,
    pub freeze_word_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::Combined,
            conv1: ConvLayerSpec {
                window: 7,
                feature_maps: 6,
            },
            conv2: ConvLayerSpec {
                window: 5,
                feature_maps: 14,
            },
            d_char: 30,
            d_word: 200,
            lstm_hidden: 100,
            num_classes: 2,
            dropout: 0.5,
            max_word_len: 30,
            max_sent_len: 40,
            apply_rules: true,
            remove_stopwords: false,
            freeze_word_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("conv1.window", self.conv1.window),
            ("conv1.feature_maps", self.conv1.feature_maps),
            ("conv2.window", self.conv2.window),
            ("conv2.feature_maps", self.conv2.feature_maps),
            ("d_char", self.d_char),
            ("d_word", self.d_word),
            ("lstm_hidden", self.lstm_hidden),
            ("max_word_len", self.max_word_len),
            ("max_sent_len", self.max_sent_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Dimension of one token vector v_i.
    pub fn token_dim(&self) -> usize {
        match self.variant {
            ModelVariant::Combined | ModelVariant::DeepCnnOnly => {
                self.d_word + self.conv2.feature_maps
            }
            ModelVariant::BiLstmOnly => self.d_word,
        }
    }

    /// Dimension of the sentence representation fed to the classifier.
    pub fn sentence_dim(&self) -> usize {
        match self.variant {
            ModelVariant::Combined | ModelVariant::BiLstmOnly => 2 * self.lstm_hidden,
            ModelVariant::DeepCnnOnly => self.token_dim(),
        }
    }

    fn uses_char_cnn(&self) -> bool {
        !matches!(self.variant, ModelVariant::BiLstmOnly)
    }

    fn uses_bilstm(&self) -> bool {
        !matches!(self.variant, ModelVariant::DeepCnnOnly)
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_xi: ParamId,
    w_hi: ParamId,
    p_i: ParamId,
    b_i: ParamId,
    w_xf: ParamId,
    w_hf: ParamId,
    p_f: ParamId,
    b_f: ParamId,
    w_xc: ParamId,
    w_hc: ParamId,
    b_c: ParamId,
    w_xo: ParamId,
    w_ho: ParamId,
    p_o: ParamId,
    b_o: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ParamIds {
    char_embedding: Option<ParamId>,
    conv1_filters: Option<ParamId>,
    conv1_bias: Option<ParamId>,
    conv2_filters: Option<ParamId>,
    conv2_bias: Option<ParamId>,
    lstm_fw: Option<LstmIds>,
    lstm_bw: Option<LstmIds>,
    softmax_w: ParamId,
    softmax_b: ParamId,
    word_embedding: ParamId,
}

/// A model instance: configuration, vocabularies, and every trainable
/// tensor. Immutable during evaluation; training takes it exclusively.
pub struct Model<F> {
    pub config: ModelConfig,
    pub word_vocab: Vocab,
    pub char_vocab: Vocab,
    /// Preprocessing lists in force when the model was built; stored in
    /// checkpoints so prediction replays the exact training pipeline.
    pub lists: ListSources,
    pub store: ParamStore<F>,
    ids: ParamIds,
}

impl<F: Scalar> Model<F> {
    /// Registers and initializes all parameters for `config`:
    /// convolution and classifier weights use Glorot uniform bounds,
    /// LSTM weights uniform +-0.1 with forget biases at 1, char
    /// embeddings uniform +-0.25. Word embeddings come from
    /// `word_embeddings` when given, otherwise the same +-0.25 init.
    pub fn init(
        config: ModelConfig,
        word_vocab: Vocab,
        char_vocab: Vocab,
        word_embeddings: Option<WordEmbeddings<F>>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let uniform = |rng: &mut ChaCha8Rng, n: usize, bound: f64| -> Vec<F> {
            (0..n).map(|_| real(rng.gen_range(-bound..bound))).collect()
        };

        let ids = {
            let char_path = if config.uses_char_cnn() {
                let vc = char_vocab.len();
                let mut data = uniform(&mut rng, vc * config.d_char, OOV_INIT_RANGE);
                data[..config.d_char].iter_mut().for_each(|v| *v = F::zero());
                let char_embedding = store.register(
                    "char_embedding",
                    Tensor::new(vec![vc, config.d_char], data)?,
                    RegisterOpts::row_sparse(),
                );

                let conv = |store: &mut ParamStore<F>,
                            rng: &mut ChaCha8Rng,
                            name: &str,
                            k: usize,
                            d: usize,
                            m: usize|
                 -> Result<(ParamId, ParamId)> {
                    let bound = (6.0 / ((d * m + k * m) as f64)).sqrt();
                    let filters = store.register(
                        &format!("{name}.filters"),
                        Tensor::new(vec![k, d, m], uniform(rng, k * d * m, bound))?,
                        RegisterOpts::default(),
                    );
                    let bias = store.register(
                        &format!("{name}.bias"),
                        Tensor::zeros(vec![k]),
                        RegisterOpts::default(),
                    );
                    Ok((filters, bias))
                };
                let (c1f, c1b) = conv(
                    &mut store,
                    &mut rng,
                    "conv1",
                    config.conv1.feature_maps,
                    config.d_char,
                    config.conv1.window,
                )?;
                let (c2f, c2b) = conv(
                    &mut store,
                    &mut rng,
                    "conv2",
                    config.conv2.feature_maps,
                    config.conv1.feature_maps,
                    config.conv2.window,
                )?;
                Some((char_embedding, c1f, c1b, c2f, c2b))
            } else {
                None
            };

            let (lstm_fw, lstm_bw) = if config.uses_bilstm() {
                let fw = register_lstm(
                    &mut store,
                    &mut rng,
                    "lstm_fw",
                    config.lstm_hidden,
                    config.token_dim(),
                )?;
                let bw = register_lstm(
                    &mut store,
                    &mut rng,
                    "lstm_bw",
                    config.lstm_hidden,
                    config.token_dim(),
                )?;
                (Some(fw), Some(bw))
            } else {
                (None, None)
            };

            let (classes, rep) = (config.num_classes, config.sentence_dim());
            let bound = (6.0 / ((rep + classes) as f64)).sqrt();
            let softmax_w = store.register(
                "softmax.weight",
                Tensor::new(vec![classes, rep], uniform(&mut rng, classes * rep, bound))?,
                RegisterOpts::constrained(),
            );
            let softmax_b = store.register(
                "softmax.bias",
                Tensor::zeros(vec![classes]),
                RegisterOpts::default(),
            );

            let vw = word_vocab.len();
            let word_matrix = match word_embeddings {
                Some(emb) => {
                    if emb.matrix.shape() != [vw, config.d_word] {
                        return Err(Error::shape(
                            "model_init",
                            format!(
                                "word embeddings {:?}, expected [{vw}, {}]",
                                emb.matrix.shape(),
                                config.d_word
                            ),
                        ));
                    }
                    emb.matrix
                }
                None => {
                    let mut data = uniform(&mut rng, vw * config.d_word, OOV_INIT_RANGE);
                    data[..config.d_word].iter_mut().for_each(|v| *v = F::zero());
                    Tensor::new(vec![vw, config.d_word], data)?
                }
            };
            let word_embedding = store.register(
                "word_embedding",
                word_matrix,
                RegisterOpts {
                    row_sparse: true,
                    trainable: !config.freeze_word_embeddings,
                    constrained: false,
                },
            );

            ParamIds {
                char_embedding: char_path.map(|p| p.0),
                conv1_filters: char_path.map(|p| p.1),
                conv1_bias: char_path.map(|p| p.2),
                conv2_filters: char_path.map(|p| p.3),
                conv2_bias: char_path.map(|p| p.4),
                lstm_fw,
                lstm_bw,
                softmax_w,
                softmax_b,
                word_embedding,
            }
        };

        Ok(Model {
            config,
            word_vocab,
            char_vocab,
            lists: ListSources::default(),
            store,
            ids,
        })
    }

    /// Records the preprocessing lists that belong with this model.
    pub fn set_list_sources(&mut self, lists: ListSources) {
        self.lists = lists;
    }

    /// Character feature vector e_i of one word: embedded characters
    /// through both wide convolutions (tanh after each) and max-over-
    /// time pooling, giving conv2.feature_maps values whatever the
    /// word length.
    pub fn char_feature(&self, g: &mut Graph<F>, char_ids: &[usize]) -> Result<NodeId> {
        let (Some(emb), Some(c1f), Some(c1b), Some(c2f), Some(c2b)) = (
            self.ids.char_embedding,
            self.ids.conv1_filters,
            self.ids.conv1_bias,
            self.ids.conv2_filters,
            self.ids.conv2_bias,
        ) else {
            return Err(Error::Contract(
                "char_feature unavailable for this model variant".into(),
            ));
        };
        let seq = g.lookup(&self.store, emb, char_ids)?;
        let f1 = g.param(&self.store, c1f);
        let b1 = g.param(&self.store, c1b);
        let conv1 = g.wide_conv1d(seq, f1, b1)?;
        let act1 = g.tanh(conv1);
        let f2 = g.param(&self.store, c2f);
        let b2 = g.param(&self.store, c2b);
        let conv2 = g.wide_conv1d(act1, f2, b2)?;
        let act2 = g.tanh(conv2);
        g.max_pool_time(act2)
    }

    /// Token vectors v_i = [r_i; e_i] in original order.
    pub fn encode_sentence(
        &self,
        g: &mut Graph<F>,
        idx: &IndexedSentence,
    ) -> Result<Vec<NodeId>> {
        let n = idx.kept_tokens();
        if n == 0 {
            return Err(Error::DegenerateTweet("no tokens to encode".into()));
        }
        let mut token_vectors = Vec::with_capacity(n);
        for i in 0..n {
            let word = g.lookup(&self.store, self.ids.word_embedding, &idx.word_ids[i..=i])?;
            let v = if self.config.uses_char_cnn() {
                let chars = self.char_feature(g, idx.word_chars(i))?;
                g.concat(&[word, chars])?
            } else {
                g.concat(&[word])?
            };
            token_vectors.push(v);
        }
        Ok(token_vectors)
    }

    fn lstm_nodes(&self, g: &mut Graph<F>, ids: &LstmIds) -> LstmStepNodes {
        LstmStepNodes {
            input: GateNodes {
                w_x: g.param(&self.store, ids.w_xi),
                w_h: g.param(&self.store, ids.w_hi),
                peephole: Some(g.param(&self.store, ids.p_i)),
                bias: g.param(&self.store, ids.b_i),
            },
            forget: GateNodes {
                w_x: g.param(&self.store, ids.w_xf),
                w_h: g.param(&self.store, ids.w_hf),
                peephole: Some(g.param(&self.store, ids.p_f)),
                bias: g.param(&self.store, ids.b_f),
            },
            cell: GateNodes {
                w_x: g.param(&self.store, ids.w_xc),
                w_h: g.param(&self.store, ids.w_hc),
                peephole: None,
                bias: g.param(&self.store, ids.b_c),
            },
            output: GateNodes {
                w_x: g.param(&self.store, ids.w_xo),
                w_h: g.param(&self.store, ids.w_ho),
                peephole: Some(g.param(&self.store, ids.p_o)),
                bias: g.param(&self.store, ids.b_o),
            },
        }
    }

    fn run_lstm(
        &self,
        g: &mut Graph<F>,
        ids: &LstmIds,
        tokens: impl Iterator<Item = NodeId>,
    ) -> Result<NodeId> {
        let hidden = self.config.lstm_hidden;
        let nodes = self.lstm_nodes(g, ids);
        let mut h = g.input_vec(vec![hidden], vec![F::zero(); hidden])?;
        let mut c = g.input_vec(vec![hidden], vec![F::zero(); hidden])?;
        for x in tokens {
            let (new_h, new_c) = lstm_step(g, x, h, c, &nodes)?;
            h = new_h;
            c = new_c;
        }
        Ok(h)
    }

    /// Sentence vector s: final forward state over t = 1..N joined with
    /// the final backward state over t = N..1.
    pub fn bilstm_encode(&self, g: &mut Graph<F>, tokens: &[NodeId]) -> Result<NodeId> {
        let (Some(fw), Some(bw)) = (self.ids.lstm_fw, self.ids.lstm_bw) else {
            return Err(Error::Contract(
                "bilstm_encode unavailable for this model variant".into(),
            ));
        };
        let h_fw = self.run_lstm(g, &fw, tokens.iter().copied())?;
        let h_bw = self.run_lstm(g, &bw, tokens.iter().rev().copied())?;
        g.concat(&[h_fw, h_bw])
    }

    /// Builds the logits for one indexed sentence. `dropout_rng`
    /// switches training mode on: inverted dropout is applied to every
    /// token vector and to the sentence vector.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        idx: &IndexedSentence,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let mut tokens = self.encode_sentence(g, idx)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            for v in &mut tokens {
                *v = g.dropout(*v, self.config.dropout, rng);
            }
        }
        let mut sentence = match self.config.variant {
            ModelVariant::Combined | ModelVariant::BiLstmOnly => self.bilstm_encode(g, &tokens)?,
            ModelVariant::DeepCnnOnly => {
                let stacked = g.stack_cols(&tokens)?;
                g.max_pool_time(stacked)?
            }
        };
        if let Some(rng) = dropout_rng {
            sentence = g.dropout(sentence, self.config.dropout, rng);
        }
        let w = g.param(&self.store, self.ids.softmax_w);
        let b = g.param(&self.store, self.ids.softmax_b);
        let affine = g.matvec(w, sentence)?;
        g.add(affine, b)
    }

    pub fn index(&self, sentence: &TokenizedSentence) -> Result<IndexedSentence> {
        index_sentence(
            sentence,
            &self.word_vocab,
            &self.char_vocab,
            self.config.max_word_len,
            self.config.max_sent_len,
        )
    }

    /// Evaluation-mode class probabilities; a pure function of the
    /// sentence and the parameters.
    pub fn predict(&self, sentence: &TokenizedSentence) -> Result<Vec<F>> {
        if sentence.is_empty() {
            return Err(Error::DegenerateTweet("empty sentence".into()));
        }
        let idx = self.index(sentence)?;
        let mut g = Graph::new();
        let logits = self.forward(&mut g, &idx, None)?;
        let probs = g.softmax(logits);
        Ok(g.value(probs).to_vec())
    }

    /// Finite-difference gradient check of one example's loss over
    /// every parameter of this model; returns the maximum relative
    /// error (see [`crate::autodiff::grad_check`]).
    pub fn grad_check_example(
        &mut self,
        sentence: &TokenizedSentence,
        label: usize,
        eps: F,
    ) -> Result<F> {
        let idx = self.index(sentence)?;
        let config = self.config.clone();
        let word_vocab = self.word_vocab.clone();
        let char_vocab = self.char_vocab.clone();
        let ids = self.ids;
        let lists = self.lists.clone();
        crate::autodiff::grad_check(&mut self.store, eps, |g, store| {
            let view = Model {
                config: config.clone(),
                word_vocab: word_vocab.clone(),
                char_vocab: char_vocab.clone(),
                lists: lists.clone(),
                store: store.clone(),
                ids,
            };
            view.example_loss(g, &idx, label, None)
        })
    }

    /// Builds the cross-entropy loss graph for one labeled example.
    pub fn example_loss(
        &self,
        g: &mut Graph<F>,
        idx: &IndexedSentence,
        label: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        if label >= self.config.num_classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                self.config.num_classes
            )));
        }
        let logits = self.forward(g, idx, dropout_rng)?;
        g.cross_entropy_logits(logits, label)
    }
}

fn register_lstm<F: Scalar>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    hidden: usize,
    input: usize,
) -> Result<LstmIds> {
    let uniform = |rng: &mut ChaCha8Rng, n: usize| -> Vec<F> {
        (0..n).map(|_| real(rng.gen_range(-0.1..0.1))).collect()
    };
    let matrix = |store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: String, r, c| {
        store.register(
            &name,
            Tensor::new(vec![r, c], uniform(rng, r * c)).unwrap(),
            RegisterOpts::constrained(),
        )
    };
    let peephole = |store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: String| {
        store.register(
            &name,
            Tensor::new(vec![hidden], uniform(rng, hidden)).unwrap(),
            RegisterOpts::default(),
        )
    };
    let bias = |store: &mut ParamStore<F>, name: String, value: f64| {
        store.register(
            &name,
            Tensor::new(vec![hidden], vec![real(value); hidden]).unwrap(),
            RegisterOpts::default(),
        )
    };
    Ok(LstmIds {
        w_xi: matrix(store, rng, format!("{prefix}.w_xi"), hidden, input),
        w_hi: matrix(store, rng, format!("{prefix}.w_hi"), hidden, hidden),
        p_i: peephole(store, rng, format!("{prefix}.p_i")),
        b_i: bias(store, format!("{prefix}.b_i"), 0.0),
        w_xf: matrix(store, rng, format!("{prefix}.w_xf"), hidden, input),
        w_hf: matrix(store, rng, format!("{prefix}.w_hf"), hidden, hidden),
        p_f: peephole(store, rng, format!("{prefix}.p_f")),
        // forget bias starts at one so early training can carry state
        b_f: bias(store, format!("{prefix}.b_f"), 1.0),
        w_xc: matrix(store, rng, format!("{prefix}.w_xc"), hidden, input),
        w_hc: matrix(store, rng, format!("{prefix}.w_hc"), hidden, hidden),
        b_c: bias(store, format!("{prefix}.b_c"), 0.0),
        w_xo: matrix(store, rng, format!("{prefix}.w_xo"), hidden, input),
        w_ho: matrix(store, rng, format!("{prefix}.w_ho"), hidden, hidden),
        p_o: peephole(store, rng, format!("{prefix}.p_o")),
        b_o: bias(store, format!("{prefix}.b_o"), 0.0),
    })
}
