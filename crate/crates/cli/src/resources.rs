//! Builds lexicons, tokenizers, models and the tutor engine from settings.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use gradechat_core::classifier::Predictor;
use gradechat_core::control::{EngineSettings, TutorEngine};
use gradechat_core::lexicon::{LevelLexicon, Provenance};
use gradechat_core::lm::{LanguageModel, NgramLm, RemoteChatClient, RemoteConfig};
use gradechat_core::synthetic;
use gradechat_core::tokenizer::{
    CommandTokenizer, DictionaryTokenizer, Span, Token, TokenizeError, TokenizedUtterance, Tokenizer, TokenizerRegistry,
};

use crate::config::{Provider, Settings};
use crate::failure::{fail, Exit};
use crate::manifest::RunManifest;

/// Whole-lexicon file written next to the per-level files.
pub const LEXICON_FILE: &str = "lexicon.json";

/// Splits on whitespace; each piece is its own lemma. For corpora that are
/// already segmented.
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenizedUtterance, TokenizeError> {
        let mut tokens = Vec::new();
        let mut start: Option<(usize, String)> = None;
        let mut pos = 0;
        for c in text.chars() {
            if c.is_whitespace() {
                if let Some((s, w)) = start.take() {
                    tokens.push(Token { surface: w.clone(), lemma: w, span: Span::new(s, pos), is_content: true });
                }
            } else {
                start.get_or_insert_with(|| (pos, String::new())).1.push(c);
            }
            pos += 1;
        }
        if let Some((s, w)) = start {
            tokens.push(Token { surface: w.clone(), lemma: w, span: Span::new(s, pos), is_content: true });
        }
        Ok(TokenizedUtterance { source: text.to_string(), tokens, dropped: Vec::new() })
    }
}

pub fn load_lexicon_dir(dir: &Path) -> anyhow::Result<LevelLexicon> {
    let whole = dir.join(LEXICON_FILE);
    if whole.is_file() {
        let text = std::fs::read_to_string(&whole).with_context(|| format!("reading {}", whole.display()))?;
        return LevelLexicon::from_json(&text).with_context(|| format!("loading {}", whole.display()));
    }
    LevelLexicon::read_level_files(dir, Provenance::GoldDeck)
        .with_context(|| format!("loading lexicon from {}", dir.display()))
}

pub fn lexicon(settings: &Settings) -> anyhow::Result<Arc<LevelLexicon>> {
    Ok(Arc::new(match &settings.lexicon {
        None => synthetic::lexicon(),
        Some(dir) => load_lexicon_dir(dir)?,
    }))
}

/// True when the tokenizer emits whitespace-separated pieces, which is how
/// models trained on its output should join tokens back together.
pub fn joins_with_spaces(settings: &Settings) -> bool {
    settings.tokenizer.backend == "whitespace"
        || (settings.tokenizer.backend == "builtin" && settings.lexicon.is_none())
}

pub fn tokenizer(settings: &Settings, lexicon: &LevelLexicon) -> anyhow::Result<Arc<dyn Tokenizer>> {
    let backend = settings.tokenizer.backend.as_str();
    if backend == "whitespace" {
        return Ok(Arc::new(WhitespaceTokenizer));
    }
    let builtin: Arc<dyn Tokenizer> = match settings.lexicon {
        None => Arc::new(synthetic::tokenizer()),
        Some(_) => Arc::new(DictionaryTokenizer::from_lexicon(lexicon)),
    };
    let mut registry = TokenizerRegistry::new();
    registry.register("builtin", builtin)?;
    for (name, ext) in &settings.tokenizer.external {
        registry.register(
            name.clone(),
            Arc::new(CommandTokenizer::new(name.clone(), ext.program.clone(), ext.args.clone())),
        )?;
    }
    Ok(registry.select(backend)?)
}

fn require<'a, T>(value: &'a Option<T>, what: &str) -> anyhow::Result<&'a T> {
    value.as_ref().ok_or_else(|| fail(Exit::Validation, format!("the {what} setting is required for this provider")))
}

fn load_ngram(path: &Path, manifest: &mut RunManifest) -> anyhow::Result<NgramLm> {
    manifest.input(path)?;
    NgramLm::load(path).with_context(|| format!("loading n-gram model {}", path.display()))
}

/// The chat model. For the toy provider `stream` picks the sub-seed of the
/// synthetic training corpus, so tutor and student differ.
pub fn chat_lm(
    settings: &Settings,
    manifest: &mut RunManifest,
    stream: &str,
) -> anyhow::Result<Arc<dyn LanguageModel>> {
    Ok(match settings.lm.provider {
        Provider::Toy => Arc::new(synthetic::toy_lm(manifest.sub_seed(stream))),
        Provider::Ngram => Arc::new(load_ngram(require(&settings.lm.model, "lm.model")?, manifest)?),
        Provider::Remote => {
            let mut cfg = RemoteConfig::new(
                require(&settings.lm.base_url, "lm.base_url")?.clone(),
                require(&settings.lm.remote_model, "lm.remote_model")?.clone(),
            );
            cfg.max_in_flight = settings.lm.max_in_flight;
            cfg.top_logprobs_cap = settings.lm.top_logprobs_cap;
            cfg.extended_sampling = settings.lm.extended_sampling;
            Arc::new(RemoteChatClient::from_env(cfg, &settings.lm.api_key_env)?)
        }
    })
}

/// N-gram model that scores perplexity.
pub fn ppl_lm(settings: &Settings, manifest: &mut RunManifest) -> anyhow::Result<NgramLm> {
    if let Some(path) = &settings.lm.ppl_model {
        return load_ngram(path, manifest);
    }
    match settings.lm.provider {
        Provider::Toy => Ok(synthetic::toy_lm(manifest.sub_seed("ppl_lm"))),
        Provider::Ngram => load_ngram(require(&settings.lm.model, "lm.model")?, manifest),
        Provider::Remote => Err(fail(Exit::Dependency, "perplexity needs an n-gram model: set lm.ppl_model")),
    }
}

/// The difficulty predictor, if one is configured or the provider is toy.
pub fn predictor(settings: &Settings, manifest: &mut RunManifest) -> anyhow::Result<Option<Predictor>> {
    if let Some(path) = &settings.predictor {
        manifest.input(path)?;
        return Ok(Some(Predictor::load(path).with_context(|| format!("loading predictor {}", path.display()))?));
    }
    Ok(match settings.lm.provider {
        Provider::Toy => Some(synthetic::toy_predictor(manifest.sub_seed("predictor")).0),
        _ => None,
    })
}

pub fn engine_settings(settings: &Settings, prompt_seed: u64) -> EngineSettings {
    EngineSettings {
        fudge_lambda: settings.fudge.lambda,
        fudge_top_k: settings.fudge.top_k,
        fudge_target_level: settings.fudge.target_level,
        n_candidates: settings.overgenerate_candidates,
        known_expressions: settings.known_expressions,
        prompt_seed,
        ..EngineSettings::default()
    }
}

pub struct Stack {
    pub lexicon: Arc<LevelLexicon>,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub engine: TutorEngine,
}

/// Lexicon, tokenizer and tutor engine for generation commands.
pub fn tutor_stack(settings: &Settings, manifest: &mut RunManifest) -> anyhow::Result<Stack> {
    manifest.input_if_set(settings.lexicon.as_deref())?;
    let lexicon = lexicon(settings)?;
    let tokenizer = tokenizer(settings, &lexicon)?;
    let lm = chat_lm(settings, manifest, "tutor_lm")?;
    let predictor = predictor(settings, manifest)?.map(Arc::new);
    let engine = TutorEngine {
        lm,
        predictor,
        lexicon: lexicon.clone(),
        tokenizer: tokenizer.clone(),
        settings: engine_settings(settings, manifest.sub_seed("prompt")),
    };
    Ok(Stack { lexicon, tokenizer, engine })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_spans_index_characters() {
        let u = WhitespaceTokenizer.tokenize(" 私 は  猫です ").unwrap();
        assert_eq!(u.lemmas(), ["私", "は", "猫です"]);
        let spans: Vec<(usize, usize)> = u.tokens.iter().map(|t| (t.span.start, t.span.end)).collect();
        assert_eq!(spans, [(1, 2), (3, 4), (6, 9)]);
        assert!(WhitespaceTokenizer.tokenize("   ").unwrap().tokens.is_empty());
    }

    #[test]
    fn unknown_backend_is_rejected() {
        let mut s = Settings::default();
        s.tokenizer.backend = "external:mecab".into();
        let lex = synthetic::lexicon();
        assert!(tokenizer(&s, &lex).is_err());
        s.tokenizer.backend = "whitespace".into();
        assert!(tokenizer(&s, &lex).is_ok());
    }
}
