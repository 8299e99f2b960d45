//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags. The fully resolved value is recorded in the run
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gradechat_core::control::Method;
use gradechat_core::metrics::TmrAggregation;
use gradechat_core::Level;
use serde::{Deserialize, Serialize};

use crate::failure::{fail, Exit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Built-in synthetic bigram model, lexicon, tokenizer and predictor.
    Toy,
    /// An n-gram model file produced by `train`.
    Ngram,
    /// An OpenAI-compatible chat-completions endpoint.
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSettings {
    pub provider: Provider,
    /// N-gram model file for the `ngram` provider.
    pub model: Option<PathBuf>,
    pub base_url: Option<String>,
    pub remote_model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub top_logprobs_cap: usize,
    pub extended_sampling: bool,
    /// N-gram model used to score perplexity; defaults to `model`.
    pub ppl_model: Option<PathBuf>,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            provider: Provider::Toy,
            model: None,
            base_url: None,
            remote_model: None,
            api_key_env: gradechat_core::lm::DEFAULT_API_KEY_ENV.to_string(),
            max_in_flight: 4,
            top_logprobs_cap: 20,
            extended_sampling: false,
            ppl_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTokenizer {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSettings {
    /// `builtin`, `whitespace` or `external:<name>`.
    pub backend: String,
    pub external: BTreeMap<String, ExternalTokenizer>,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings { backend: "builtin".into(), external: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FudgeSettings {
    pub lambda: f64,
    pub top_k: usize,
    /// Defaults to the learner's level.
    pub target_level: Option<Level>,
}

impl Default for FudgeSettings {
    fn default() -> Self {
        FudgeSettings { lambda: 0.8, top_k: gradechat_core::control::fudge::DEFAULT_TOP_K, target_level: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pairs {
    /// All 25 tutor/student level combinations.
    All,
    /// Only pairs where tutor and student share a level.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfChatSettings {
    pub methods: Vec<Method>,
    pub turns: usize,
    pub dialogues_per_pair: usize,
    pub pairs: Pairs,
    pub jobs: usize,
    pub tmr_aggregation: TmrAggregation,
}

impl Default for SelfChatSettings {
    fn default() -> Self {
        SelfChatSettings {
            methods: Method::ALL.to_vec(),
            turns: gradechat_core::selfchat::DEFAULT_TURNS,
            dialogues_per_pair: gradechat_core::selfchat::DEFAULT_DIALOGUES_PER_PAIR,
            pairs: Pairs::All,
            jobs: 1,
            tmr_aggregation: TmrAggregation::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub init_scale: f64,
    pub ngram_order: usize,
    pub ngram_delta: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.05,
            embedding_dim: 32,
            init_scale: 0.1,
            ngram_order: 2,
            ngram_delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicSettings {
    pub global_floor: f64,
    pub level_floor: f64,
    pub assign_threshold: f64,
}

impl Default for HeuristicSettings {
    fn default() -> Self {
        let t = gradechat_core::lexicon::HeuristicThresholds::default();
        HeuristicSettings {
            global_floor: t.global_floor,
            level_floor: t.level_floor,
            assign_threshold: t.assign_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub seed: u64,
    /// Directory written by `build-vocab`; the built-in toy lexicon when unset.
    pub lexicon: Option<PathBuf>,
    /// Predictor file written by `train`; the toy predictor is trained on the
    /// fly for the `toy` provider when unset.
    pub predictor: Option<PathBuf>,
    pub tokenizer: TokenizerSettings,
    pub lm: LmSettings,
    pub fudge: FudgeSettings,
    pub overgenerate_candidates: usize,
    pub known_expressions: usize,
    pub selfchat: SelfChatSettings,
    pub train: TrainSettings,
    pub heuristic: HeuristicSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            lexicon: None,
            predictor: None,
            tokenizer: TokenizerSettings::default(),
            lm: LmSettings::default(),
            fudge: FudgeSettings::default(),
            overgenerate_candidates: gradechat_core::control::overgenerate::DEFAULT_CANDIDATES,
            known_expressions: 100,
            selfchat: SelfChatSettings::default(),
            train: TrainSettings::default(),
            heuristic: HeuristicSettings::default(),
        }
    }
}

impl Settings {
    /// Defaults overlaid with the TOML file at `path`, if given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Settings> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| fail(Exit::Validation, format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let bad = |m: String| Err(fail(Exit::Validation, m));
        if !(0.0..=1.0).contains(&self.fudge.lambda) {
            return bad(format!("fudge lambda must be in [0, 1], got {}", self.fudge.lambda));
        }
        if self.fudge.top_k == 0 {
            return bad("fudge top_k must be at least 1".into());
        }
        if self.overgenerate_candidates == 0 {
            return bad("overgenerate_candidates must be at least 1".into());
        }
        if self.selfchat.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.selfchat.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse().map_err(|e: gradechat_core::control::ParseMethodError| e.to_string())?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("no methods given".into());
    }
    Ok(out)
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: gradechat_core::control::ParseMethodError| e.to_string())
}

pub fn parse_level(s: &str) -> Result<Level, String> {
    s.parse().map_err(|e: gradechat_core::level::ParseLevelError| e.to_string())
}
