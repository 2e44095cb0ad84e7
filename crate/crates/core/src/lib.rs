//! Sentence-level sentiment classification for short social-media
//! texts: rule-based tweet preprocessing, character-level convolutional
//! word features, a bidirectional peephole LSTM sentence encoder, and a
//! softmax classifier, trained with Adadelta under an l2 max-norm
//! constraint.

pub mod autodiff;
pub mod datasets;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};
