//! Overgenerate-and-rerank by estimated Token Miss Rate.

use std::cmp::Ordering;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{require_student_turn, GenerationError};
use crate::level::Level;
use crate::lexicon::LevelLexicon;
use crate::lm::sampling::sub_seed;
use crate::lm::{ChatContext, LanguageModel};
use crate::metrics::token_miss_rate;
use crate::tokenizer::Tokenizer;

pub const DEFAULT_CANDIDATES: usize = 5;

#[derive(Clone, Copy)]
pub struct RerankConfig<'a> {
    pub n_candidates: usize,
    pub lexicon: &'a LevelLexicon,
    pub tokenizer: &'a dyn Tokenizer,
    pub user_level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub text: String,
    pub tokens: usize,
    pub estimated_tmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overgenerated {
    pub chosen: String,
    pub chosen_index: usize,
    pub candidates: Vec<ScoredCandidate>,
}

/// Lowest estimated TMR first, then fewer tokens, then earlier sample.
pub fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    a.estimated_tmr.total_cmp(&b.estimated_tmr).then(a.tokens.cmp(&b.tokens)).then(a.index.cmp(&b.index))
}

/// Position in `candidates` of the best non-empty candidate.
pub fn select_candidate(candidates: &[ScoredCandidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.tokens > 0)
        .min_by(|(_, a), (_, b)| rank_order(a, b))
        .map(|(i, _)| i)
}

/// Samples `n_candidates` replies concurrently, candidate `i` seeded with a
/// sub-seed of the context seed, and returns the best by [`rank_order`]
/// together with every scored candidate.
pub fn generate_overgenerate(
    context: &ChatContext,
    lm: &dyn LanguageModel,
    cfg: &RerankConfig<'_>,
) -> Result<Overgenerated, GenerationError> {
    if cfg.n_candidates == 0 {
        return Err(GenerationError::InvalidConfig("n_candidates must be at least 1".into()));
    }
    require_student_turn(context)?;
    let base = context.generation.seed.unwrap_or(0);
    let texts: Vec<Result<String, _>> = thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.n_candidates)
            .map(|i| {
                let mut ctx = context.clone();
                ctx.generation.seed = Some(sub_seed(base, i as u64));
                s.spawn(move || lm.complete(&ctx))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("candidate generation panicked")).collect()
    });
    let mut candidates = Vec::with_capacity(texts.len());
    for (index, text) in texts.into_iter().enumerate() {
        let text = text?;
        let utt = cfg.tokenizer.tokenize(&text)?;
        let tmr = token_miss_rate(&utt, cfg.lexicon, cfg.user_level);
        candidates.push(ScoredCandidate { index, text, tokens: tmr.total_tokens, estimated_tmr: tmr.tmr });
    }
    let best = select_candidate(&candidates).ok_or(GenerationError::AllCandidatesEmpty)?;
    Ok(Overgenerated { chosen: candidates[best].text.clone(), chosen_index: candidates[best].index, candidates })
}
