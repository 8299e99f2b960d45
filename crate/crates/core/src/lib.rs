//! Difficulty-controlled conversational generation for language learners.
//!
//! The crate is organised bottom-up:
//!
//! - [`level`] and [`lexicon`] hold leveled vocabularies (gold flashcard decks
//!   and corpus-frequency bins).
//! - [`tokenizer`] segments utterances into lemmatized tokens.
//! - [`lm`] is the language-model provider interface with a trainable n-gram
//!   model and an OpenAI-compatible remote client.
//! - [`classifier`] is the prefix difficulty predictor used by FUDGE decoding
//!   and by ControlError.
//! - [`metrics`] computes Token Miss Rate and the companion metrics.
//! - [`control`] implements the four tutor generation methods.
//! - [`selfchat`] runs the tutor/student self-play evaluation suite.

pub mod assets;
pub mod classifier;
pub mod control;
pub mod digest;
pub mod level;
pub mod lexicon;
pub mod lm;
pub mod metrics;
pub mod selfchat;
pub mod synthetic;
pub mod tokenizer;

pub use level::Level;
