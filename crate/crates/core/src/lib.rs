//! Interpretable toxicity classification.
//!
//! A small encoder gives every token a toxicity score, and the post's score is
//! the maximum of its token scores. Training combines a sequence-level loss
//! with a token-level loss on annotated spans, so the highest-scoring tokens
//! serve directly as the explanation of a decision.
//!
//! ```
//! use spanmax::corpus::synth::{generate_synthetic, SynthConfig};
//! use spanmax::encoder::EncoderConfig;
//! use spanmax::head::Thresholds;
//! use spanmax::tokenizer::build_vocab;
//! use spanmax::training::{train, TrainConfig};
//!
//! let corpus = generate_synthetic(&SynthConfig { size: 40, ..SynthConfig::default() }, 7)?;
//! let vocab = build_vocab(&corpus, 1)?;
//! let cfg = TrainConfig {
//!     epochs: 2,
//!     encoder: EncoderConfig { d: 8, layers: 1, heads: 2, ffn_width: 16, ..EncoderConfig::new(0) },
//!     ..TrainConfig::default()
//! };
//! let model = train(&corpus, None, &vocab, &cfg, None)?.checkpoint.model;
//! let p = model.predict("you are such a moron", &vocab, Thresholds::default())?;
//! assert_eq!(p.sequence_score, p.token_scores[p.argmax]);
//! # Ok::<(), spanmax::Error>(())
//! ```

pub mod baseline;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod metrics;
pub mod model;
pub mod params;
pub mod render;
pub mod span;
pub mod tokenizer;
pub mod training;

pub use corpus::{Corpus, Label, Post};
pub use error::{Error, Result};
pub use model::{Model, Pooling};
pub use span::{CharSet, Span};
pub use tokenizer::Vocab;
