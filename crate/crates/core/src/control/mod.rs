//! Tutor generation methods: baseline prompt, detailed prompt,
//! overgenerate-and-rerank, and FUDGE decoding.

pub mod fudge;
pub mod overgenerate;
pub mod prompt;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use fudge::{fudge_step, generate_fudge, FudgeConfig};
pub use overgenerate::{generate_overgenerate, select_candidate, Overgenerated, RerankConfig, ScoredCandidate};
pub use prompt::{build_prompt, PromptError, PromptRole, PromptSpec};

use crate::classifier::Predictor;
use crate::level::Level;
use crate::lexicon::LevelLexicon;
use crate::lm::sampling::sub_seed;
use crate::lm::{ChatContext, ChatTurn, GenerationConfig, LanguageModel, LmError, Role};
use crate::tokenizer::{TokenizeError, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("the tutor replies to a non-empty student turn; the conversation does not end with one")]
    EmptyStudentTurn,
    #[error("every overgenerated candidate was empty")]
    AllCandidatesEmpty,
    #[error("method {0} needs a difficulty predictor")]
    MissingPredictor(Method),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Detailed,
    Overgenerate,
    Fudge,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method {0:?}; valid methods: baseline, detailed, overgenerate, fudge")]
pub struct ParseMethodError(pub String);

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Detailed, Method::Overgenerate, Method::Fudge];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Detailed => "detailed",
            Method::Overgenerate => "overgenerate",
            Method::Fudge => "fudge",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseMethodError(s.to_string()))
    }
}

pub(crate) fn require_student_turn(context: &ChatContext) -> Result<(), GenerationError> {
    match context.last_turn() {
        Some(t) if t.role == Role::Student && !t.text.trim().is_empty() => Ok(()),
        _ => Err(GenerationError::EmptyStudentTurn),
    }
}

pub fn generate_baseline(context: &ChatContext, lm: &dyn LanguageModel) -> Result<String, GenerationError> {
    require_student_turn(context)?;
    Ok(lm.complete(context)?)
}

/// Same call as [`generate_baseline`]; the difference lies entirely in the
/// system prompt the context was built with.
pub fn generate_detailed(context: &ChatContext, lm: &dyn LanguageModel) -> Result<String, GenerationError> {
    generate_baseline(context, lm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub fudge_lambda: f64,
    pub fudge_top_k: usize,
    /// FUDGE target; the learner's level when unset.
    #[serde(default)]
    pub fudge_target_level: Option<Level>,
    pub n_candidates: usize,
    pub known_expressions: usize,
    /// System prompt used by overgenerate and FUDGE.
    pub decoding_prompt: PromptRole,
    pub generation: GenerationConfig,
    /// Seeds the known-expression sample of the detailed prompt.
    pub prompt_seed: u64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            fudge_lambda: 0.8,
            fudge_top_k: fudge::DEFAULT_TOP_K,
            fudge_target_level: None,
            n_candidates: overgenerate::DEFAULT_CANDIDATES,
            known_expressions: 100,
            decoding_prompt: PromptRole::TutorBaseline,
            generation: GenerationConfig::tutor_default(),
            prompt_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorReply {
    pub text: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<ScoredCandidate>>,
}

/// A tutor that can answer with any of the four methods.
#[derive(Clone)]
pub struct TutorEngine {
    pub lm: Arc<dyn LanguageModel>,
    pub predictor: Option<Arc<Predictor>>,
    pub lexicon: Arc<LevelLexicon>,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub settings: EngineSettings,
}

impl TutorEngine {
    pub fn system_prompt(&self, method: Method, level: Level) -> Result<String, GenerationError> {
        let role = match method {
            Method::Baseline => PromptRole::TutorBaseline,
            Method::Detailed => PromptRole::TutorDetailed,
            Method::Overgenerate | Method::Fudge => self.settings.decoding_prompt,
        };
        let mut spec = PromptSpec::for_level(role, level);
        if role == PromptRole::TutorDetailed {
            spec.known_expressions = prompt::sample_known_expressions(
                &self.lexicon,
                level,
                self.settings.known_expressions,
                sub_seed(self.settings.prompt_seed, level.value() as u64),
            );
        }
        Ok(build_prompt(&spec)?)
    }

    pub fn context(
        &self,
        method: Method,
        level: Level,
        turns: &[ChatTurn],
        seed: u64,
    ) -> Result<ChatContext, GenerationError> {
        let mut ctx =
            ChatContext::new(self.system_prompt(method, level)?, Role::Tutor, self.settings.generation.with_seed(seed));
        for t in turns {
            ctx.push(t.role, t.text.clone())?;
        }
        Ok(ctx)
    }

    pub fn respond(
        &self,
        method: Method,
        level: Level,
        turns: &[ChatTurn],
        seed: u64,
    ) -> Result<TutorReply, GenerationError> {
        let ctx = self.context(method, level, turns, seed)?;
        let lm = self.lm.as_ref();
        let (text, candidates) = match method {
            Method::Baseline => (generate_baseline(&ctx, lm)?, None),
            Method::Detailed => (generate_detailed(&ctx, lm)?, None),
            Method::Overgenerate => {
                let cfg = RerankConfig {
                    n_candidates: self.settings.n_candidates,
                    lexicon: &self.lexicon,
                    tokenizer: self.tokenizer.as_ref(),
                    user_level: level,
                };
                let out = generate_overgenerate(&ctx, lm, &cfg)?;
                (out.chosen, Some(out.candidates))
            }
            Method::Fudge => {
                let predictor = self.predictor.as_deref().ok_or(GenerationError::MissingPredictor(method))?;
                let cfg = FudgeConfig {
                    lambda: self.settings.fudge_lambda,
                    top_k: self.settings.fudge_top_k,
                    target_level: self.settings.fudge_target_level.unwrap_or(level),
                };
                (generate_fudge(&ctx, lm, predictor, &cfg)?, None)
            }
        };
        Ok(TutorReply { text, method, candidates })
    }
}

/// Uncontrolled conversation partner with the student prompt.
#[derive(Clone)]
pub struct StudentAgent {
    pub lm: Arc<dyn LanguageModel>,
    pub level: Level,
    pub topic: String,
    pub generation: GenerationConfig,
}

impl StudentAgent {
    pub fn new(lm: Arc<dyn LanguageModel>, level: Level, topic: impl Into<String>) -> Self {
        StudentAgent { lm, level, topic: topic.into(), generation: GenerationConfig::student_default() }
    }

    pub fn system_prompt(&self) -> Result<String, PromptError> {
        build_prompt(&PromptSpec::for_level(PromptRole::Student, self.level).with_topic(self.topic.clone()))
    }

    pub fn respond(&self, turns: &[ChatTurn], seed: u64) -> Result<String, GenerationError> {
        let mut ctx = ChatContext::new(self.system_prompt()?, Role::Student, self.generation.with_seed(seed));
        for t in turns {
            ctx.push(t.role, t.text.clone())?;
        }
        Ok(self.lm.complete(&ctx)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn engine() -> TutorEngine {
        let (predictor, _) = synthetic::toy_predictor(0);
        TutorEngine {
            lm: Arc::new(synthetic::toy_lm(0)),
            predictor: Some(Arc::new(predictor)),
            lexicon: Arc::new(synthetic::lexicon()),
            tokenizer: Arc::new(synthetic::tokenizer()),
            settings: EngineSettings::default(),
        }
    }

    fn opening() -> Vec<ChatTurn> {
        vec![ChatTurn { role: Role::Student, text: "私 は 猫".into() }]
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "sft".parse::<Method>().unwrap_err();
        assert!(err.to_string().contains("baseline, detailed, overgenerate, fudge"));
    }

    #[test]
    fn every_method_answers_deterministically() {
        let e = engine();
        for m in Method::ALL {
            let a = e.respond(m, Level::N5, &opening(), 3).unwrap();
            let b = e.respond(m, Level::N5, &opening(), 3).unwrap();
            assert_eq!(a, b);
            assert!(!a.text.is_empty(), "{m}");
        }
    }

    #[test]
    fn empty_student_turn_is_rejected() {
        let e = engine();
        assert!(matches!(e.respond(Method::Baseline, Level::N5, &[], 0), Err(GenerationError::EmptyStudentTurn)));
        let blank = vec![ChatTurn { role: Role::Student, text: "  ".into() }];
        assert!(e.respond(Method::Fudge, Level::N5, &blank, 0).is_err());
    }

    #[test]
    fn fudge_without_predictor_is_an_error() {
        let mut e = engine();
        e.predictor = None;
        assert!(matches!(
            e.respond(Method::Fudge, Level::N5, &opening(), 0),
            Err(GenerationError::MissingPredictor(Method::Fudge))
        ));
    }

    #[test]
    fn student_speaks_with_student_prompt() {
        let s = StudentAgent::new(Arc::new(synthetic::toy_lm(0)), Level::N5, "Summer vacation plans");
        assert!(s.system_prompt().unwrap().contains("Summer vacation plans"));
        assert_eq!(s.respond(&[], 4).unwrap(), s.respond(&[], 4).unwrap());
    }
}
