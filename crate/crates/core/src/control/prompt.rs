//! System prompts for the student and the two prompted tutor variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{self, BASELINE_TUTOR_TEMPLATE, DETAILED_TUTOR_TEMPLATE, LANGUAGE, STUDENT_TEMPLATE};
use crate::level::Level;
use crate::lexicon::LevelLexicon;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("prompt field {{{0}}} is required for this role but empty")]
pub struct PromptError(pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    TutorBaseline,
    TutorDetailed,
    Student,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub role: PromptRole,
    pub language: String,
    pub level: Level,
    pub level_word: String,
    pub level_description: String,
    pub level_guidelines: String,
    pub example_dialogue: String,
    pub known_expressions: Vec<String>,
    pub topic: Option<String>,
}

impl PromptSpec {
    /// Spec filled from the bundled level table, without known expressions
    /// or topic.
    pub fn for_level(role: PromptRole, level: Level) -> Self {
        let info = assets::level_info(level);
        PromptSpec {
            role,
            language: LANGUAGE.to_string(),
            level,
            level_word: info.level_word.to_string(),
            level_description: info.description_text(),
            level_guidelines: info.guidelines.to_string(),
            example_dialogue: assets::example_dialogue(level).to_string(),
            known_expressions: Vec::new(),
            topic: None,
        }
    }

    pub fn with_topic(mut self, topic: impl Into<String>) -> Self {
        self.topic = Some(topic.into());
        self
    }

    pub fn with_known_expressions(mut self, expressions: Vec<String>) -> Self {
        self.known_expressions = expressions;
        self
    }
}

fn require<'a>(value: &'a str, name: &'static str) -> Result<&'a str, PromptError> {
    if value.trim().is_empty() {
        Err(PromptError(name))
    } else {
        Ok(value)
    }
}

/// Substitutes the spec into its role's template.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, PromptError> {
    let language = require(&spec.language, "language")?;
    let level_word = require(&spec.level_word, "level_word")?;
    let filled = match spec.role {
        PromptRole::TutorBaseline => BASELINE_TUTOR_TEMPLATE.replace("{level_word}", level_word),
        PromptRole::TutorDetailed => {
            if spec.known_expressions.is_empty() {
                return Err(PromptError("known_expressions"));
            }
            DETAILED_TUTOR_TEMPLATE
                .replace("{level_word}", level_word)
                .replace("{level_description}", require(&spec.level_description, "level_description")?)
                .replace("{level_conv_example}", require(&spec.example_dialogue, "level_conv_example")?)
                .replace("{level_guidelines}", require(&spec.level_guidelines, "level_guidelines")?)
                .replace("{known_expressions}", &spec.known_expressions.join("、"))
        }
        PromptRole::Student => {
            let topic = require(spec.topic.as_deref().unwrap_or(""), "topic")?;
            STUDENT_TEMPLATE
                .replace("{level_word}", level_word)
                .replace("{desc}", require(&spec.level_description, "desc")?)
                .replace("{topic}", topic)
        }
    };
    Ok(filled.replace("{language}", language))
}

/// Up to `count` lemmas binned exactly at `level`, sampled without
/// replacement and returned in lexicon order.
pub fn sample_known_expressions(lexicon: &LevelLexicon, level: Level, count: usize, seed: u64) -> Vec<String> {
    let pool: Vec<&str> = lexicon.at_level(level).map(|e| e.lemma.as_str()).collect();
    if pool.len() <= count {
        return pool.into_iter().map(String::from).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].to_string()).collect()
}
