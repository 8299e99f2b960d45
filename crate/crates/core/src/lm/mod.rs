//! Language-model providers.
//!
//! Every provider implements [`LanguageModel`]: chat completion for the
//! prompt-only methods and, where the backend exposes it, truncated next-token
//! distributions for FUDGE decoding. Local n-gram models expose the full
//! distribution; the remote client is capped by the API's logprob width.

mod ngram;
mod remote;
pub mod sampling;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ngram::{train_ngram, NgramConfig, NgramLm, UniformLm, BOS, EOS};
pub use remote::{RemoteChatClient, RemoteConfig, DEFAULT_API_KEY_ENV};

pub type TokenId = u32;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("provider {provider:?} does not expose next-token distributions; use a prompt-only method (baseline, detailed, overgenerate)")]
    Capability { provider: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error after {attempts} attempt(s) (retryable: {retryable}): {message}")]
    Transport { message: String, retryable: bool, attempts: u32, retry_after_ms: Option<u64> },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("cannot score an empty token sequence")]
    EmptySequence,
    #[error("chat context has no turns")]
    EmptyContext,
    #[error("turn order violated: {0}")]
    RoleOrder(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One candidate next token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token_id: TokenId,
    pub text: String,
    pub log_prob: f64,
}

/// Top-k next-token candidates in non-increasing log-probability order,
/// ties broken by ascending token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTokenDistribution {
    pub candidates: Vec<Candidate>,
    pub k: usize,
    /// Whether the candidate probabilities have been rescaled to sum to one.
    pub renormalized: bool,
}

/// Stable descending order by log-probability, then ascending id.
pub fn rank_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then(a.token_id.cmp(&b.token_id)));
}

/// ln Σ exp(xᵢ), stable for large magnitudes; -inf for an empty or all -inf input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

impl NextTokenDistribution {
    /// Ranks `candidates` and keeps the best `k`.
    pub fn top_k(mut candidates: Vec<Candidate>, k: usize) -> Self {
        rank_candidates(&mut candidates);
        candidates.truncate(k);
        NextTokenDistribution { candidates, k, renormalized: false }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Rescales the candidates' probabilities to sum to one.
    pub fn renormalize(&self) -> Self {
        let z = log_sum_exp(self.candidates.iter().map(|c| c.log_prob));
        let candidates = self.candidates.iter().map(|c| Candidate { log_prob: c.log_prob - z, ..c.clone() }).collect();
        NextTokenDistribution { candidates, k: self.k, renormalized: true }
    }

    pub fn total_probability(&self) -> f64 {
        self.candidates.iter().map(|c| c.log_prob.exp()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.log_prob.exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Tutor,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Student => Role::Tutor,
            Role::Tutor => Role::Student,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Student => "student",
            Role::Tutor => "tutor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub repetition_penalty: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl GenerationConfig {
    /// Tutor defaults: temperature 0.7, top-p 0.8, top-k 20, repetition
    /// penalty 1.05.
    pub fn tutor_default() -> Self {
        GenerationConfig {
            temperature: 0.7,
            top_p: 0.8,
            top_k: 20,
            repetition_penalty: 1.05,
            max_tokens: 64,
            seed: None,
        }
    }

    /// Student defaults: temperature 0.7 and top-p 1.0 for more varied turns.
    pub fn student_default() -> Self {
        GenerationConfig { top_p: 1.0, ..Self::tutor_default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        GenerationConfig { seed: Some(seed), ..self }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return bad("repetition_penalty must be >= 1");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1");
        }
        Ok(())
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::tutor_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

/// System prompt plus the alternating conversation so far, seen from the
/// perspective of `speaker`, the role whose next utterance is requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatContext {
    pub system_prompt: String,
    pub speaker: Role,
    pub turns: Vec<ChatTurn>,
    pub generation: GenerationConfig,
}

impl ChatContext {
    pub fn new(system_prompt: impl Into<String>, speaker: Role, generation: GenerationConfig) -> Self {
        ChatContext { system_prompt: system_prompt.into(), speaker, turns: Vec::new(), generation }
    }

    /// Appends a turn; consecutive turns must alternate roles.
    pub fn push(&mut self, role: Role, text: impl Into<String>) -> Result<(), LmError> {
        if let Some(last) = self.turns.last() {
            if last.role == role {
                return Err(LmError::RoleOrder(format!("two consecutive {role} turns")));
            }
        }
        self.turns.push(ChatTurn { role, text: text.into() });
        Ok(())
    }

    pub fn last_turn(&self) -> Option<&ChatTurn> {
        self.turns.last()
    }

    pub fn is_empty(&self) -> bool {
        self.system_prompt.is_empty() && self.turns.is_empty()
    }
}

pub trait LanguageModel: Send + Sync {
    fn name(&self) -> &str;

    /// Whether [`LanguageModel::next_distribution`] is available.
    fn supports_distributions(&self) -> bool;

    /// Top-`k` candidates for the token following `prefix` in the reply being
    /// generated for `context`. Log-probabilities come from the untruncated
    /// distribution.
    fn next_distribution(
        &self,
        context: &ChatContext,
        prefix: &[String],
        k: usize,
    ) -> Result<NextTokenDistribution, LmError>;

    /// One reply for `context.speaker`.
    fn complete(&self, context: &ChatContext) -> Result<String, LmError>;

    /// Text of the end-of-utterance token, if the provider has one.
    fn end_token(&self) -> Option<&str> {
        None
    }

    /// String placed between generated tokens when detokenizing.
    fn joiner(&self) -> &str {
        ""
    }
}

/// Models that assign a probability to each token of a sequence.
pub trait SequenceScorer: Send + Sync {
    /// ln P(token | history); `-inf` for a token the model cannot produce.
    fn token_log_prob(&self, history: &[String], token: &str) -> f64;
}

/// Perplexity, with zero-probability tokens reported as a distinct value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perplexity {
    Finite(f64),
    Infinite,
}

impl Perplexity {
    pub fn value(self) -> f64 {
        match self {
            Perplexity::Finite(v) => v,
            Perplexity::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Perplexity::Finite(v) => Some(v),
            Perplexity::Infinite => None,
        }
    }
}

/// exp of the mean negative log-likelihood per token.
pub fn perplexity<S: AsRef<str>>(model: &dyn SequenceScorer, tokens: &[S]) -> Result<Perplexity, LmError> {
    if tokens.is_empty() {
        return Err(LmError::EmptySequence);
    }
    let mut history: Vec<String> = Vec::with_capacity(tokens.len());
    let mut nll = 0.0;
    for token in tokens {
        let lp = model.token_log_prob(&history, token.as_ref());
        if !lp.is_finite() {
            return Ok(Perplexity::Infinite);
        }
        nll -= lp;
        history.push(token.as_ref().to_string());
    }
    Ok(Perplexity::Finite((nll / tokens.len() as f64).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalized_distribution_sums_to_one() {
        let d = NextTokenDistribution::top_k(
            vec![
                Candidate { token_id: 2, text: "c".into(), log_prob: -3.0 },
                Candidate { token_id: 0, text: "a".into(), log_prob: -1.0 },
                Candidate { token_id: 1, text: "b".into(), log_prob: -1.0 },
            ],
            2,
        );
        assert_eq!(d.candidates.iter().map(|c| c.token_id).collect::<Vec<_>>(), [0, 1]);
        let r = d.renormalize();
        assert!((r.total_probability() - 1.0).abs() < 1e-12);
        assert!((r.candidates[0].log_prob - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn context_enforces_alternation() {
        let mut ctx = ChatContext::new("sys", Role::Tutor, GenerationConfig::default());
        ctx.push(Role::Student, "a").unwrap();
        assert!(ctx.push(Role::Student, "b").is_err());
        ctx.push(Role::Tutor, "c").unwrap();
    }

    #[test]
    fn generation_defaults_validate() {
        GenerationConfig::tutor_default().validate().unwrap();
        let s = GenerationConfig::student_default();
        assert_eq!((s.temperature, s.top_p), (0.7, 1.0));
        let t = GenerationConfig::tutor_default();
        assert_eq!((t.temperature, t.top_p, t.top_k, t.repetition_penalty), (0.7, 0.8, 20, 1.05));
        assert!(GenerationConfig { top_p: 0.0, ..t }.validate().is_err());
        assert!(GenerationConfig { top_k: 0, ..t }.validate().is_err());
        assert!(GenerationConfig { repetition_penalty: 0.9, ..t }.validate().is_err());
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert!((log_sum_exp(vec![1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
