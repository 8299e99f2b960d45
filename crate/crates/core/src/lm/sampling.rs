//! Seeded token-level decoding shared by the built-in LM and FUDGE.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rank_candidates, ChatContext, LanguageModel, LmError, NextTokenDistribution};

/// Sentence-final punctuation that ends an utterance once it has at least
/// [`MIN_TOKENS_BEFORE_STOP`] tokens.
pub fn is_sentence_final(token: &str) -> bool {
    matches!(token, "。" | "！" | "？" | "!" | "?" | "．")
}

pub const MIN_TOKENS_BEFORE_STOP: usize = 3;

pub fn rng_for(seed: Option<u64>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.unwrap_or(0))
}

/// Penalizes candidates already present in `seen`, then re-ranks.
/// Log-probabilities are never positive, so the penalty multiplies them
/// (pushing them further from zero); positive scores would be divided.
pub fn penalize_repeats(dist: &mut NextTokenDistribution, seen: &HashSet<&str>, penalty: f64) {
    if penalty == 1.0 || seen.is_empty() {
        return;
    }
    for c in &mut dist.candidates {
        if seen.contains(c.text.as_str()) {
            c.log_prob = if c.log_prob > 0.0 { c.log_prob / penalty } else { c.log_prob * penalty };
        }
    }
    rank_candidates(&mut dist.candidates);
}

/// Deterministic, well-mixed sub-seed for stream `index` of `base`.
pub fn sub_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

/// Samples a candidate index after temperature scaling and nucleus
/// filtering. Returns `None` for an empty distribution.
pub fn sample_candidate<R: Rng>(
    dist: &NextTokenDistribution,
    temperature: f64,
    top_p: f64,
    rng: &mut R,
) -> Option<usize> {
    if dist.candidates.is_empty() {
        return None;
    }
    let max = dist.candidates.iter().map(|c| c.log_prob).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dist.candidates.iter().map(|c| ((c.log_prob - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += weights[i] / total;
        if mass >= top_p {
            break;
        }
    }
    let kept_total: f64 = kept.iter().map(|&i| weights[i]).sum();
    let mut r = rng.gen::<f64>() * kept_total;
    for &i in &kept {
        r -= weights[i];
        if r < 0.0 {
            return Some(i);
        }
    }
    kept.last().copied()
}

/// Autoregressive decoding: fetch the top-`k` distribution, apply the
/// repetition penalty, hand it to `reweight` (which must return a
/// renormalized distribution), then sample. Stops at the provider's end
/// token, at `max_tokens`, or at sentence-final punctuation.
pub fn decode<F>(
    lm: &dyn LanguageModel,
    context: &ChatContext,
    k: usize,
    mut reweight: F,
) -> Result<Vec<String>, LmError>
where
    F: FnMut(&[String], NextTokenDistribution) -> NextTokenDistribution,
{
    let gen = &context.generation;
    gen.validate()?;
    if k == 0 {
        return Err(LmError::InvalidConfig("k must be at least 1".into()));
    }
    let mut rng = rng_for(gen.seed);
    let end = lm.end_token().map(str::to_string);
    let mut out: Vec<String> = Vec::new();
    while out.len() < gen.max_tokens {
        let mut dist = lm.next_distribution(context, &out, k)?;
        {
            let seen: HashSet<&str> = out.iter().map(String::as_str).collect();
            penalize_repeats(&mut dist, &seen, gen.repetition_penalty);
        }
        let dist = reweight(&out, dist);
        let Some(i) = sample_candidate(&dist, gen.temperature, gen.top_p, &mut rng) else {
            break;
        };
        let token = dist.candidates[i].text.clone();
        if end.as_deref() == Some(token.as_str()) {
            break;
        }
        let stop = is_sentence_final(&token);
        out.push(token);
        if stop && out.len() >= MIN_TOKENS_BEFORE_STOP {
            break;
        }
    }
    Ok(out)
}

/// Plain sampling from the base model's renormalized top-`k` distribution.
pub fn sample_base(lm: &dyn LanguageModel, context: &ChatContext, k: usize) -> Result<Vec<String>, LmError> {
    decode(lm, context, k, |_, d| d.renormalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::Candidate;

    fn dist(lps: &[f64]) -> NextTokenDistribution {
        NextTokenDistribution {
            candidates: lps
                .iter()
                .enumerate()
                .map(|(i, &lp)| Candidate { token_id: i as u32, text: i.to_string(), log_prob: lp })
                .collect(),
            k: lps.len(),
            renormalized: true,
        }
    }

    #[test]
    fn nucleus_keeps_only_head() {
        let d = dist(&[0.9f64.ln(), 0.05f64.ln(), 0.05f64.ln()]);
        let mut rng = rng_for(Some(1));
        for _ in 0..200 {
            assert_eq!(sample_candidate(&d, 1.0, 0.8, &mut rng), Some(0));
        }
    }

    #[test]
    fn sampling_frequencies_track_probabilities() {
        let d = dist(&[0.75f64.ln(), 0.25f64.ln()]);
        let mut rng = rng_for(Some(9));
        let n = 20_000;
        let hits = (0..n).filter(|_| sample_candidate(&d, 1.0, 1.0, &mut rng) == Some(0)).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.02, "{freq}");
    }

    #[test]
    fn repetition_penalty_lowers_seen_tokens() {
        let mut d = dist(&[-1.0, -1.0]);
        let seen: HashSet<&str> = ["1"].into_iter().collect();
        penalize_repeats(&mut d, &seen, 1.05);
        assert_eq!(d.candidates[0].text, "0");
        assert_eq!(d.candidates[0].log_prob, -1.0);
        assert!((d.candidates[1].log_prob + 1.05).abs() < 1e-12);
    }

    #[test]
    fn sub_seeds_differ_by_index() {
        let seeds: HashSet<u64> = (0..100).map(|i| sub_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
    }
}
