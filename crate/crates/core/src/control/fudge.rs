//! FUDGE decoding.
//!
//! At each step the base model's top-k log-probabilities x are mixed with
//! the predictor's log-probabilities a of the target level for each
//! candidate extension: ŷ = λ·a + (1 − λ)·x, renormalized over the k
//! candidates. Both operands are log-probabilities so that λ means the same
//! thing whatever the base model's logit scale. The repetition penalty is
//! applied to x before mixing.

use serde::{Deserialize, Serialize};

use super::{require_student_turn, GenerationError};
use crate::classifier::{Predictor, PrefixState};
use crate::level::Level;
use crate::lm::sampling::decode;
use crate::lm::{Candidate, ChatContext, LanguageModel, LmError, NextTokenDistribution};

pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FudgeConfig {
    pub lambda: f64,
    pub top_k: usize,
    pub target_level: Level,
}

impl FudgeConfig {
    pub fn new(lambda: f64, target_level: Level) -> Self {
        FudgeConfig { lambda, top_k: DEFAULT_TOP_K, target_level }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GenerationError::InvalidConfig(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(GenerationError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// ŷᵢ = λ·aᵢ + (1 − λ)·xᵢ over the candidates of `base`, re-ranked and
/// renormalized. `a` is aligned with `base.candidates`.
pub fn interpolate(base: &NextTokenDistribution, a: &[f64], lambda: f64) -> NextTokenDistribution {
    let candidates: Vec<Candidate> = base
        .candidates
        .iter()
        .zip(a)
        .map(|(c, a)| Candidate { log_prob: lambda * a + (1.0 - lambda) * c.log_prob, ..c.clone() })
        .collect();
    NextTokenDistribution::top_k(candidates, base.k).renormalize()
}

/// One reweighting step given the predictor's running prefix summary.
pub fn fudge_step_with_state(
    base: &NextTokenDistribution,
    predictor: &Predictor,
    state: &PrefixState,
    cfg: &FudgeConfig,
) -> NextTokenDistribution {
    let texts: Vec<&str> = base.candidates.iter().map(|c| c.text.as_str()).collect();
    let a = predictor.score_extensions(state, &texts, cfg.target_level);
    interpolate(base, &a, cfg.lambda)
}

pub fn fudge_step<S: AsRef<str>>(
    base: &NextTokenDistribution,
    predictor: &Predictor,
    prefix: &[S],
    cfg: &FudgeConfig,
) -> NextTokenDistribution {
    fudge_step_with_state(base, predictor, &predictor.state(prefix), cfg)
}

/// FUDGE decoding that reports every emitted distribution, with the prefix
/// it continues, to `observe`.
pub fn generate_fudge_observed(
    context: &ChatContext,
    lm: &dyn LanguageModel,
    predictor: &Predictor,
    cfg: &FudgeConfig,
    observe: &mut dyn FnMut(&[String], &NextTokenDistribution),
) -> Result<Vec<String>, GenerationError> {
    cfg.validate()?;
    if !lm.supports_distributions() {
        return Err(LmError::Capability { provider: lm.name().to_string() }.into());
    }
    let mut state = predictor.empty_state();
    let tokens = decode(lm, context, cfg.top_k, |prefix, dist| {
        for t in &prefix[state.len()..] {
            predictor.push(&mut state, t);
        }
        let out = fudge_step_with_state(&dist, predictor, &state, cfg);
        observe(prefix, &out);
        out
    })?;
    Ok(tokens)
}

pub fn generate_fudge_tokens(
    context: &ChatContext,
    lm: &dyn LanguageModel,
    predictor: &Predictor,
    cfg: &FudgeConfig,
) -> Result<Vec<String>, GenerationError> {
    generate_fudge_observed(context, lm, predictor, cfg, &mut |_, _| {})
}

pub fn generate_fudge(
    context: &ChatContext,
    lm: &dyn LanguageModel,
    predictor: &Predictor,
    cfg: &FudgeConfig,
) -> Result<String, GenerationError> {
    require_student_turn(context)?;
    Ok(generate_fudge_tokens(context, lm, predictor, cfg)?.join(lm.joiner()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{expand_prefixes, train, TrainConfig};

    fn predictor() -> Predictor {
        let ex = [expand_prefixes(&["p", "q"], Level::N5), expand_prefixes(&["r", "s"], Level::N1)].concat();
        train(&ex, TrainConfig { learning_rate: 0.05, embedding_dim: 4, ..Default::default() }).unwrap().0
    }

    fn base(lps: &[(&str, f64)]) -> NextTokenDistribution {
        NextTokenDistribution::top_k(
            lps.iter()
                .enumerate()
                .map(|(i, (t, lp))| Candidate { token_id: i as u32, text: t.to_string(), log_prob: *lp })
                .collect(),
            lps.len(),
        )
    }

    #[test]
    fn lambda_zero_is_renormalized_base() {
        let p = predictor();
        let b = base(&[("p", -0.5), ("r", -1.5), ("s", -3.0)]);
        let out = fudge_step(&b, &p, &["q"], &FudgeConfig::new(0.0, Level::N5));
        assert_eq!(out, b.renormalize());
    }

    #[test]
    fn lambda_one_follows_predictor() {
        let p = predictor();
        let b = base(&[("r", -0.1), ("s", -2.5), ("p", -4.0)]);
        let out = fudge_step(&b, &p, &["q"], &FudgeConfig::new(1.0, Level::N5));
        let st = p.state(&["q"]);
        let mut scored: Vec<(f64, &str)> =
            ["r", "s", "p"].iter().map(|t| (p.score_extensions(&st, &[*t], Level::N5)[0], *t)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ranked: Vec<&str> = out.candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(ranked, scored.iter().map(|s| s.1).collect::<Vec<_>>());
        assert!((out.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_half_mix_is_uniform() {
        let b = base(&[("x", 0.8f64.ln()), ("y", 0.2f64.ln())]);
        let out = interpolate(&b, &[0.2f64.ln(), 0.8f64.ln()], 0.5);
        for c in &out.candidates {
            assert!((c.log_prob.exp() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_lambda_is_rejected() {
        assert!(FudgeConfig::new(1.5, Level::N5).validate().is_err());
        assert!(FudgeConfig { top_k: 0, ..FudgeConfig::new(0.5, Level::N5) }.validate().is_err());
    }
}
