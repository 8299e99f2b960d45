//! Utterance and transcript metrics.
//!
//! Token Miss Rate counts tokens whose lexicon level exceeds the learner's.
//! Unbinned tokens stay in the denominator and are treated as understood.
//! ControlError is the squared gap between a classifier's level estimate and
//! the target. PPL, length and div@3 measure fluency.

use serde::{Deserialize, Serialize};

use crate::classifier::Predictor;
pub use crate::classifier::ScoreMode;
use crate::level::Level;
use crate::lexicon::LevelLexicon;
use crate::lm::{perplexity, Perplexity, SequenceScorer};
use crate::tokenizer::{Span, TokenizedUtterance};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("highlight range {start}..{end} is reversed or empty")]
    ReversedRange { start: usize, end: usize },
    #[error("highlight range {start}..{end} exceeds utterance length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("cannot compute {metric}: no {dependency} configured")]
    MissingScorer { metric: &'static str, dependency: &'static str },
    #[error("cannot score an empty list of utterances")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedToken {
    pub index: usize,
    /// `None` for an unbinned token.
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmrBreakdown {
    pub total_tokens: usize,
    pub cnt_above: usize,
    pub cnt_unbinned: usize,
    /// Fraction in [0, 1]; zero for an empty utterance.
    pub tmr: f64,
    /// Tokens above the learner's level and unbinned tokens, in order.
    pub flagged: Vec<FlaggedToken>,
}

impl TmrBreakdown {
    fn finish(total_tokens: usize, cnt_above: usize, cnt_unbinned: usize, flagged: Vec<FlaggedToken>) -> Self {
        TmrBreakdown {
            total_tokens,
            cnt_above,
            cnt_unbinned,
            tmr: if total_tokens == 0 { 0.0 } else { cnt_above as f64 / total_tokens as f64 },
            flagged,
        }
    }
}

/// TMR over bare lemmas.
pub fn token_miss_rate_lemmas<S: AsRef<str>>(lemmas: &[S], lexicon: &LevelLexicon, user_level: Level) -> TmrBreakdown {
    let mut above = 0;
    let mut unbinned = 0;
    let mut flagged = Vec::new();
    for (index, lemma) in lemmas.iter().enumerate() {
        match lexicon.lookup(lemma.as_ref()) {
            Some(level) if level > user_level => {
                above += 1;
                flagged.push(FlaggedToken { index, level: Some(level) });
            }
            Some(_) => {}
            None => {
                unbinned += 1;
                flagged.push(FlaggedToken { index, level: None });
            }
        }
    }
    TmrBreakdown::finish(lemmas.len(), above, unbinned, flagged)
}

pub fn token_miss_rate(utterance: &TokenizedUtterance, lexicon: &LevelLexicon, user_level: Level) -> TmrBreakdown {
    token_miss_rate_lemmas(&utterance.lemmas(), lexicon, user_level)
}

/// (s − t)².
pub fn control_error(score: f64, target: Level) -> f64 {
    let d = score - target.value() as f64;
    d * d
}

/// Distinct over total sliding token trigrams; 1.0 below three tokens.
pub fn trigram_diversity<S: AsRef<str>>(tokens: &[S]) -> f64 {
    if tokens.len() < 3 {
        return 1.0;
    }
    let grams: Vec<[&str; 3]> = tokens.windows(3).map(|w| [w[0].as_ref(), w[1].as_ref(), w[2].as_ref()]).collect();
    let mut distinct = grams.clone();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.len() as f64 / grams.len() as f64
}

/// TMR from learner highlights: a token is missed when any highlighted
/// character range overlaps its span.
pub fn tmr_from_annotation(utterance: &TokenizedUtterance, highlights: &[Span]) -> Result<TmrBreakdown, MetricsError> {
    let len = utterance.char_len();
    for h in highlights {
        if h.start >= h.end {
            return Err(MetricsError::ReversedRange { start: h.start, end: h.end });
        }
        if h.end > len {
            return Err(MetricsError::OutOfBounds { start: h.start, end: h.end, len });
        }
    }
    let flagged: Vec<FlaggedToken> = utterance
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| highlights.iter().any(|h| h.overlaps(&t.span)))
        .map(|(index, _)| FlaggedToken { index, level: None })
        .collect();
    Ok(TmrBreakdown::finish(utterance.len(), flagged.len(), 0, flagged))
}

/// Pluggable readability score.
pub trait ReadabilityScorer: Send + Sync {
    /// Label written next to every score this scorer produces.
    fn name(&self) -> &str;
    fn score(&self, utterance: &TokenizedUtterance, lexicon: &LevelLexicon) -> f64;
}

/// A stand-in readability score, NOT JReadability:
/// `intercept + length_coef · mean sentence length + hard_coef · fraction of
/// tokens above N3`. Higher means easier. The published JReadability
/// coefficients are not reproduced here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReadability {
    pub intercept: f64,
    pub length_coef: f64,
    pub hard_coef: f64,
}

impl Default for SurrogateReadability {
    fn default() -> Self {
        SurrogateReadability { intercept: 6.0, length_coef: -0.05, hard_coef: -4.0 }
    }
}

pub const SURROGATE_READABILITY_NAME: &str = "surrogate (NOT-JReadability)";

impl ReadabilityScorer for SurrogateReadability {
    fn name(&self) -> &str {
        SURROGATE_READABILITY_NAME
    }

    fn score(&self, utterance: &TokenizedUtterance, lexicon: &LevelLexicon) -> f64 {
        let n = utterance.len();
        if n == 0 {
            return self.intercept;
        }
        let sentences =
            utterance.source.split(['。', '！', '？', '!', '?']).filter(|s| !s.trim().is_empty()).count().max(1);
        let hard = utterance.lemmas().iter().filter(|l| lexicon.lookup(l).is_some_and(|lv| lv > Level::N3)).count();
        self.intercept + self.length_coef * (n as f64 / sentences as f64) + self.hard_coef * (hard as f64 / n as f64)
    }
}

/// Scorers used to evaluate one utterance.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub lexicon: &'a LevelLexicon,
    pub predictor: Option<&'a Predictor>,
    pub lm: Option<&'a dyn SequenceScorer>,
    pub readability: Option<&'a dyn ReadabilityScorer>,
    pub score_mode: ScoreMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub length: usize,
    pub total_tokens: usize,
    pub cnt_above: usize,
    pub cnt_unbinned: usize,
    pub tmr: f64,
    /// `None` when the utterance has no tokens or a zero-probability token.
    pub ppl: Option<f64>,
    pub ppl_infinite: bool,
    pub div3: f64,
    pub readability: Option<f64>,
    /// Classifier level estimate s(x); `None` for an empty utterance.
    pub jlpt_score: Option<f64>,
    pub control_error: Option<f64>,
}

/// Scores one tutor utterance. TMR is measured against `user_level`,
/// ControlError against `target`.
pub fn score_utterance(
    utterance: &TokenizedUtterance,
    user_level: Level,
    target: Level,
    scorers: &Scorers<'_>,
) -> Result<TurnMetrics, MetricsError> {
    let predictor = scorers
        .predictor
        .ok_or(MetricsError::MissingScorer { metric: "ControlError", dependency: "difficulty predictor" })?;
    let lm =
        scorers.lm.ok_or(MetricsError::MissingScorer { metric: "PPL", dependency: "perplexity language model" })?;
    let lemmas = utterance.lemmas();
    let tmr = token_miss_rate_lemmas(&lemmas, scorers.lexicon, user_level);
    let (ppl, ppl_infinite) = match perplexity(lm, &lemmas) {
        Ok(Perplexity::Finite(v)) => (Some(v), false),
        Ok(Perplexity::Infinite) => (None, true),
        Err(_) => (None, false),
    };
    let jlpt_score = predictor.score_tokens(&lemmas, scorers.score_mode).ok();
    Ok(TurnMetrics {
        length: lemmas.len(),
        total_tokens: tmr.total_tokens,
        cnt_above: tmr.cnt_above,
        cnt_unbinned: tmr.cnt_unbinned,
        tmr: tmr.tmr,
        ppl,
        ppl_infinite,
        div3: trigram_diversity(&lemmas),
        readability: scorers.readability.map(|r| r.score(utterance, scorers.lexicon)),
        jlpt_score,
        control_error: jlpt_score.map(|s| control_error(s, target)),
    })
}

/// Per-utterance mean (macro) or pooled-token (micro) TMR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TmrAggregation {
    #[default]
    Macro,
    Micro,
}

/// Means over a set of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub utterances: usize,
    pub avg_length: f64,
    /// Mean over utterances with finite perplexity.
    pub avg_ppl: Option<f64>,
    pub ppl_infinite: usize,
    pub div3: f64,
    pub readability: Option<f64>,
    /// Fraction in [0, 1].
    pub tmr: f64,
    pub control_error: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(turns: &[TurnMetrics], tmr_mode: TmrAggregation) -> Result<MetricsSummary, MetricsError> {
    if turns.is_empty() {
        return Err(MetricsError::Empty);
    }
    let tmr = match tmr_mode {
        TmrAggregation::Macro => mean(turns.iter().map(|t| t.tmr)).unwrap_or(0.0),
        TmrAggregation::Micro => {
            let total: usize = turns.iter().map(|t| t.total_tokens).sum();
            let above: usize = turns.iter().map(|t| t.cnt_above).sum();
            if total == 0 {
                0.0
            } else {
                above as f64 / total as f64
            }
        }
    };
    Ok(MetricsSummary {
        utterances: turns.len(),
        avg_length: mean(turns.iter().map(|t| t.length as f64)).unwrap_or(0.0),
        avg_ppl: mean(turns.iter().filter_map(|t| t.ppl)),
        ppl_infinite: turns.iter().filter(|t| t.ppl_infinite).count(),
        div3: mean(turns.iter().map(|t| t.div3)).unwrap_or(1.0),
        readability: mean(turns.iter().filter_map(|t| t.readability)),
        tmr,
        control_error: mean(turns.iter().filter_map(|t| t.control_error)),
    })
}

/// Mean of several summaries, weighting each equally.
pub fn average_summaries(items: &[MetricsSummary]) -> Result<MetricsSummary, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(MetricsSummary {
        utterances: items.iter().map(|s| s.utterances).sum(),
        avg_length: mean(items.iter().map(|s| s.avg_length)).unwrap_or(0.0),
        avg_ppl: mean(items.iter().filter_map(|s| s.avg_ppl)),
        ppl_infinite: items.iter().map(|s| s.ppl_infinite).sum(),
        div3: mean(items.iter().map(|s| s.div3)).unwrap_or(1.0),
        readability: mean(items.iter().filter_map(|s| s.readability)),
        tmr: mean(items.iter().map(|s| s.tmr)).unwrap_or(0.0),
        control_error: mean(items.iter().filter_map(|s| s.control_error)),
    })
}
