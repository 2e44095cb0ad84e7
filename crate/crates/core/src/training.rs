//! Mini-batch training with Adadelta, dropout, and the l2 max-norm
//! constraint, plus evaluation and k-fold cross-validation.
//!
//! Determinism contract: identical (seed, data, config) give identical
//! parameter trajectories in 64-bit mode. Batch gradients are computed
//! in parallel over fixed example chunks and merged in example order,
//! so the result does not depend on thread count or scheduling; every
//! dropout mask is derived from (seed, epoch, example index) rather
//! than from a shared stream.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{real, GradBuffer, Graph, ParamStore, Scalar, Tensor};
use crate::datasets::{shuffle, split_dev, Dataset};
use crate::embeddings::{build_vocabs, load_pretrained, IndexedSentence};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::textproc::Preprocessor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub l2_max_norm: f64,
    pub seed: u64,
    /// Epochs without a dev-accuracy improvement before stopping.
    pub patience: usize,
    /// Dev share carved out of each cross-validation training pool.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_epochs: 50,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            l2_max_norm: 3.0,
            seed: 42,
            patience: 10,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adadelta_rho) {
            return Err(Error::Config("adadelta_rho must lie in (0, 1)".into()));
        }
        if self.adadelta_eps <= 0.0 {
            return Err(Error::Config("adadelta_eps must be positive".into()));
        }
        if self.l2_max_norm <= 0.0 {
            return Err(Error::Config("l2_max_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) || self.dev_fraction == 0.0 {
            return Err(Error::Config("dev_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-parameter decaying averages of squared gradients and squared
/// updates, both starting at zero.
pub struct OptimizerState<F> {
    grad_sq: Vec<Tensor<F>>,
    update_sq: Vec<Tensor<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Tensor<F>> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        OptimizerState {
            grad_sq: zeros.clone(),
            update_sq: zeros,
        }
    }
}

/// One Adadelta update from the gradients accumulated in `store`:
///
/// ```text
/// E[g^2]  <- rho E[g^2]  + (1 - rho) g^2
/// dx       = -(sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps)) g
/// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
/// ```
///
/// Frozen parameters are skipped; coordinates that have never seen a
/// gradient are left untouched.
pub fn adadelta_step<F: Scalar>(
    store: &mut ParamStore<F>,
    state: &mut OptimizerState<F>,
    rho: f64,
    eps: f64,
) {
    let rho = real::<F>(rho);
    let eps = real::<F>(eps);
    let one_minus_rho = F::one() - rho;
    let zero = F::zero();
    for id in store.ids().collect::<Vec<_>>() {
        if !store.meta(id).trainable {
            continue;
        }
        let slot = id.index();
        let tensor = store.get_mut(id);
        let grad_sq = state.grad_sq[slot].data_mut();
        let update_sq = state.update_sq[slot].data_mut();
        let grad_snapshot: Vec<F> = tensor.grad().expect("trainable without grad").to_vec();
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad_snapshot[i];
            if g == zero && grad_sq[i] == zero && update_sq[i] == zero {
                continue;
            }
            grad_sq[i] = rho * grad_sq[i] + one_minus_rho * g * g;
            let dx = -((update_sq[i] + eps).sqrt() / (grad_sq[i] + eps).sqrt()) * g;
            update_sq[i] = rho * update_sq[i] + one_minus_rho * dx * dx;
            data[i] = data[i] + dx;
        }
    }
}

/// Rescales every row of every constrained matrix whose l2 norm
/// exceeds `max_norm` back onto the constraint sphere.
pub fn renorm_l2<F: Scalar>(store: &mut ParamStore<F>, max_norm: f64) {
    let max_norm = real::<F>(max_norm);
    for id in store.ids().collect::<Vec<_>>() {
        if !store.meta(id).constrained {
            continue;
        }
        let tensor = store.get_mut(id);
        let cols = *tensor.shape().last().unwrap();
        let data = tensor.data_mut();
        for row in data.chunks_mut(cols) {
            let norm = row
                .iter()
                .fold(F::zero(), |acc, v| acc + *v * *v)
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                row.iter_mut().for_each(|v| *v = *v * scale);
            }
        }
    }
}

/// Dataset rendered down to indexed, labeled examples.
pub struct PreparedSet {
    pub examples: Vec<(IndexedSentence, usize)>,
    /// Examples dropped because preprocessing left nothing.
    pub dropped: usize,
}

pub fn prepare_examples<F: Scalar>(
    model: &Model<F>,
    preproc: &Preprocessor,
    dataset: &Dataset,
) -> Result<PreparedSet> {
    let mut examples = Vec::with_capacity(dataset.len());
    let mut dropped = 0;
    for (tweet, label) in dataset.labeled()? {
        if label >= model.config.num_classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                model.config.num_classes
            )));
        }
        match preproc
            .preprocess(tweet, model.config.apply_rules)
            .and_then(|p| preproc.tokenize(&p.text))
        {
            Ok(sentence) => examples.push((model.index(&sentence)?, label)),
            Err(Error::DegenerateTweet(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(PreparedSet { examples, dropped })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    /// Line-delimited `epoch<TAB>train_loss<TAB>dev_acc` records.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.train_loss, r.dev_accuracy));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Trains `model` in place, leaving it at the best-dev-accuracy epoch.
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    preproc: &Preprocessor,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_step_callback(model, preproc, train_set, dev_set, config, |_| {})
}

/// [`train`] with an observer invoked after every optimizer step
/// (instrumentation for tests and tooling).
pub fn train_with_step_callback<F: Scalar>(
    model: &mut Model<F>,
    preproc: &Preprocessor,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
    mut after_step: impl FnMut(&ParamStore<F>),
) -> Result<TrainReport> {
    config.validate()?;
    let train_examples = prepare_examples(model, preproc, train_set)?;
    let dev_examples = prepare_examples(model, preproc, dev_set)?;
    if train_examples.examples.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if dev_examples.examples.is_empty() {
        return Err(Error::Contract("empty dev set".into()));
    }
    let examples = &train_examples.examples;
    let n = examples.len();

    let mut state = OptimizerState::new(&model.store);
    let mut report = TrainReport::default();
    let mut best_snapshot = model.store.snapshot();
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut epochs_since_improvement = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0));
        shuffle(&mut order, &mut epoch_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_loss_sum = run_batch(model, examples, batch, epoch, config)?;
            if !batch_loss_sum.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += batch_loss_sum;
            adadelta_step(
                &mut model.store,
                &mut state,
                config.adadelta_rho,
                config.adadelta_eps,
            );
            renorm_l2(&mut model.store, config.l2_max_norm);
            after_step(&model.store);
        }

        let dev_accuracy = evaluate_prepared(model, &dev_examples.examples).accuracy;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            dev_accuracy,
        });

        if dev_accuracy > best_accuracy {
            best_accuracy = dev_accuracy;
            report.best_epoch = epoch;
            best_snapshot = model.store.snapshot();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
        }
        if epochs_since_improvement >= config.patience {
            break;
        }
    }

    model.store.restore(&best_snapshot);
    report.best_dev_accuracy = best_accuracy;
    Ok(report)
}

/// Number of parallel gradient chunks per batch. Fixed so the gradient
/// summation grouping depends only on the batch size, never on the
/// machine.
const GRAD_CHUNKS: usize = 8;

/// Accumulates the mean-loss gradient of one batch into the store's
/// gradient buffers and returns the summed raw loss of the batch.
fn run_batch<F: Scalar>(
    model: &mut Model<F>,
    examples: &[(IndexedSentence, usize)],
    batch: &[usize],
    epoch: usize,
    config: &TrainConfig,
) -> Result<f64> {
    let batch_len = batch.len();
    let chunk_size = batch_len.div_ceil(GRAD_CHUNKS);
    let scale = real::<F>(1.0 / batch_len as f64);

    let shared: &Model<F> = model;
    let chunks: Vec<(f64, GradBuffer<F>)> = batch
        .par_chunks(chunk_size)
        .map(|chunk| -> Result<(f64, GradBuffer<F>)> {
            let mut buf = GradBuffer::new(&shared.store);
            let mut loss_sum = 0.0;
            for &example_idx in chunk {
                let (indexed, label) = &examples[example_idx];
                let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix(
                    config.seed,
                    epoch as u64,
                    1 + example_idx as u64,
                ));
                let mut g = Graph::new();
                let loss =
                    shared.example_loss(&mut g, indexed, *label, Some(&mut dropout_rng))?;
                g.backward_scaled(loss, scale)?;
                g.accumulate_grads(&mut buf);
                loss_sum += g.scalar(loss).to_f64().unwrap_or(f64::NAN);
            }
            Ok((loss_sum, buf))
        })
        .collect::<Result<Vec<_>>>()?;

    model.store.zero_grads();
    let mut total = 0.0;
    for (loss, buf) in &chunks {
        total += loss;
        buf.apply_to(&mut model.store);
    }
    Ok(total)
}

/// splitmix64-style mixing for derived seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    /// confusion[true_label][predicted_label]
    pub confusion: Vec<Vec<usize>>,
    /// Examples that could not be preprocessed; counted in `total` as
    /// errors but absent from the confusion matrix.
    pub degenerate: usize,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

struct PreparedEvaluation {
    accuracy: f64,
    correct: usize,
    confusion: Vec<Vec<usize>>,
}

/// Index of the largest probability, lowest class index on ties.
pub fn argmax<F: Scalar>(probs: &[F]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

fn evaluate_prepared<F: Scalar>(
    model: &Model<F>,
    examples: &[(IndexedSentence, usize)],
) -> PreparedEvaluation {
    let classes = model.config.num_classes;
    // examples are sharded across workers; the ordered collect plus
    // integer counting keeps the result scheduler-independent
    let outcomes: Vec<(usize, usize)> = examples
        .par_iter()
        .map(|(indexed, label)| {
            let mut g = Graph::new();
            let logits = model
                .forward(&mut g, indexed, None)
                .expect("prepared example must evaluate");
            let probs = g.softmax(logits);
            (*label, argmax(g.value(probs)))
        })
        .collect();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (label, predicted) in outcomes {
        confusion[label][predicted] += 1;
        if label == predicted {
            correct += 1;
        }
    }
    PreparedEvaluation {
        accuracy: if examples.is_empty() {
            0.0
        } else {
            correct as f64 / examples.len() as f64
        },
        correct,
        confusion,
    }
}

/// Accuracy and per-class confusion counts over a labeled dataset.
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    preproc: &Preprocessor,
    dataset: &Dataset,
) -> Result<Evaluation> {
    let prepared = prepare_examples(model, preproc, dataset)?;
    let result = evaluate_prepared(model, &prepared.examples);
    Ok(Evaluation {
        correct: result.correct,
        total: prepared.examples.len() + prepared.dropped,
        confusion: result.confusion,
        degenerate: prepared.dropped,
    })
}

/// Everything needed to build a fresh model from a training corpus.
pub struct ModelSpec<'a> {
    pub config: ModelConfig,
    pub min_count: usize,
    /// Pretrained word-vector file; `None` means random init.
    pub vectors: Option<&'a Path>,
}

/// Builds vocabularies from `corpus`, loads or initializes word
/// embeddings, and initializes a model.
pub fn build_model<F: Scalar>(
    spec: &ModelSpec,
    preproc: &Preprocessor,
    corpus: &Dataset,
    seed: u64,
) -> Result<Model<F>> {
    let mut sentences = Vec::with_capacity(corpus.len());
    for tweet in &corpus.examples {
        match preproc
            .preprocess(tweet, spec.config.apply_rules)
            .and_then(|p| preproc.tokenize(&p.text))
        {
            Ok(s) => sentences.push(s),
            Err(Error::DegenerateTweet(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let (words, chars) = build_vocabs(&sentences, spec.min_count)?;
    let embeddings = match spec.vectors {
        Some(path) => Some(load_pretrained::<F>(
            path,
            &words,
            spec.config.d_word,
            mix(seed, 0x77, 0),
        )?),
        None => None,
    };
    let mut model = Model::init(spec.config.clone(), words, chars, embeddings, seed)?;
    model.set_list_sources(preproc.list_sources().clone());
    Ok(model)
}

/// Deterministic fold assignment: a seeded shuffle dealt round-robin,
/// so fold sizes differ by at most one and the folds partition
/// `0..n`.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xf01d, 0));
    shuffle(&mut order, &mut rng);
    (0..k)
        .map(|f| order.iter().copied().skip(f).step_by(k).collect())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrossValidation {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub stdev: f64,
}

/// Standard k-fold cross-validation: deterministic seeded fold
/// assignment; within each fold the remaining data is split 10% dev /
/// 90% train (per `config.dev_fraction`), a fresh model is trained,
/// and the held-out fold is scored.
pub fn cross_validate<F: Scalar>(
    dataset: &Dataset,
    k: usize,
    spec: &ModelSpec,
    preproc: &Preprocessor,
    config: &TrainConfig,
) -> Result<CrossValidation> {
    if k < 2 {
        return Err(Error::Contract("cross-validation needs k >= 2".into()));
    }
    if k > dataset.len() {
        return Err(Error::Contract(format!(
            "k = {k} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let folds = fold_assignment(dataset.len(), k, config.seed);

    let fold_accuracies: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let test_idx = &folds[f];
            let test = Dataset::new(
                format!("{}-fold{f}-test", dataset.name),
                test_idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
            );
            let pool: Vec<_> = folds
                .iter()
                .enumerate()
                .filter(|(other, _)| *other != f)
                .flat_map(|(_, fold)| fold.iter().map(|&i| dataset.examples[i].clone()))
                .collect();
            let pool = Dataset::new(format!("{}-fold{f}-pool", dataset.name), pool);
            let (train_set, dev_set) =
                split_dev(&pool, config.dev_fraction, mix(config.seed, 0xdeb, f as u64))?;

            let fold_config = TrainConfig {
                seed: mix(config.seed, 0xf0, f as u64),
                ..config.clone()
            };
            let mut model = build_model::<F>(spec, preproc, &pool, fold_config.seed)?;
            train(&mut model, preproc, &train_set, &dev_set, &fold_config)?;
            Ok(evaluate(&model, preproc, &test)?.accuracy())
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = fold_accuracies.iter().sum::<f64>() / k as f64;
    let stdev = if k > 1 {
        (fold_accuracies
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / (k - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(CrossValidation {
        fold_accuracies,
        mean,
        stdev,
    })
}
