//! Exit codes.
//!
//! `0` success, `2` invalid input or configuration, `3` a missing dependency
//! or capability (no predictor, provider without distributions, failing
//! backend), `4` filesystem errors. Anything unclassified exits with `1`.

use std::fmt;

use gradechat_core::classifier::ClassifierError;
use gradechat_core::control::GenerationError;
use gradechat_core::lexicon::LexiconError;
use gradechat_core::lm::LmError;
use gradechat_core::metrics::MetricsError;
use gradechat_core::selfchat::SelfChatError;
use gradechat_core::tokenizer::TokenizeError;
use gradechat_service::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Validation = 2,
    Dependency = 3,
    Io = 4,
}

/// An error with an explicit exit class.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn fail(exit: Exit, message: impl Into<String>) -> anyhow::Error {
    Failure { exit, message: message.into() }.into()
}

fn lm(e: &LmError) -> Exit {
    match e {
        LmError::Capability { .. } | LmError::Auth(_) | LmError::Transport { .. } => Exit::Dependency,
        LmError::Io(_) => Exit::Io,
        _ => Exit::Validation,
    }
}

fn tokenize(e: &TokenizeError) -> Exit {
    match e {
        TokenizeError::Backend { .. } => Exit::Dependency,
        _ => Exit::Validation,
    }
}

fn metrics(e: &MetricsError) -> Exit {
    match e {
        MetricsError::MissingScorer { .. } => Exit::Dependency,
        _ => Exit::Validation,
    }
}

fn classify_one(e: &(dyn std::error::Error + 'static)) -> Option<Exit> {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return Some(f.exit);
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return Some(Exit::Io);
    }
    if let Some(e) = e.downcast_ref::<LmError>() {
        return Some(lm(e));
    }
    if let Some(e) = e.downcast_ref::<TokenizeError>() {
        return Some(tokenize(e));
    }
    if let Some(e) = e.downcast_ref::<MetricsError>() {
        return Some(metrics(e));
    }
    if let Some(e) = e.downcast_ref::<GenerationError>() {
        return Some(match e {
            GenerationError::Lm(e) => lm(e),
            GenerationError::Tokenize(e) => tokenize(e),
            GenerationError::MissingPredictor(_) => Exit::Dependency,
            _ => Exit::Validation,
        });
    }
    if let Some(e) = e.downcast_ref::<LexiconError>() {
        return Some(match e {
            LexiconError::Io { .. } => Exit::Io,
            LexiconError::Tokenize(e) => tokenize(e),
            _ => Exit::Validation,
        });
    }
    if let Some(e) = e.downcast_ref::<ClassifierError>() {
        return Some(match e {
            ClassifierError::Io(_) => Exit::Io,
            ClassifierError::Tokenize(e) => tokenize(e),
            _ => Exit::Validation,
        });
    }
    if let Some(e) = e.downcast_ref::<SelfChatError>() {
        return Some(match e {
            SelfChatError::Io(_) => Exit::Io,
            SelfChatError::Metrics(e) => metrics(e),
            _ => Exit::Validation,
        });
    }
    if let Some(e) = e.downcast_ref::<StoreError>() {
        return Some(match e {
            StoreError::Io { .. } => Exit::Io,
            StoreError::Corrupt { .. } => Exit::Validation,
        });
    }
    None
}

/// Process exit code for an error, from the outermost classifiable cause.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify_one).map_or(1, |e| e as u8)
}
