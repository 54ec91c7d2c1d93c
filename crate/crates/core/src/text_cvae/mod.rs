//! Conditional lyric-line VAE and the line ranker.
//!
//! The audio code z_s is appended to the word embedding at every encoder
//! and decoder step. The decoder's initial hidden state comes from
//! `tanh(W [z_t; z_s] + b)`.

mod model;
mod ranker;
mod train;
mod vocab;

pub use model::{GenerateConfig, TextCvae, TextCvaeConfig, TextTerms, CHECKPOINT_KIND};
pub use ranker::{rank_and_select, HeuristicRanker, LineRanker, LineSource, LyricLine};
pub use train::{aligned_pairs, train, validate, TextPair, TextStep, TextTrace, TextTrainConfig, TextValidation};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, UNK};
