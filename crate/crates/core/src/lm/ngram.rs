//! Additively smoothed n-gram LM over lemma tokens.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling;
use super::{Candidate, ChatContext, LanguageModel, LmError, NextTokenDistribution, SequenceScorer};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const FORMAT: &str = "gradechat-ngram";
const VERSION: u32 = 1;

const BOS_ID: u32 = u32::MAX;
const UNK_ID: u32 = u32::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub order: usize,
    pub delta: f64,
    /// Wrap each sentence in BOS/EOS. Without boundaries the corpus is one
    /// continuous stream and the model has no end token.
    pub sentence_boundaries: bool,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { order: 2, delta: 0.1, sentence_boundaries: true }
    }
}

#[derive(Debug, Clone)]
pub struct NgramLm {
    name: String,
    config: NgramConfig,
    joiner: String,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, HashMap<u32, u64>>,
    context_totals: HashMap<Vec<u32>, u64>,
}

/// Counts all order-grams of `corpus`. Vocabulary ids follow sorted token
/// order so identical corpora always produce identical models.
pub fn train_ngram<S: AsRef<str>>(corpus: &[Vec<S>], config: NgramConfig) -> Result<NgramLm, LmError> {
    if config.order == 0 {
        return Err(LmError::InvalidConfig("order must be at least 1".into()));
    }
    if !(config.delta >= 0.0 && config.delta.is_finite()) {
        return Err(LmError::InvalidConfig("delta must be a non-negative number".into()));
    }
    let mut words: Vec<String> = corpus.iter().flatten().map(|t| t.as_ref().to_string()).collect();
    if words.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    if words.iter().any(|w| w == BOS || w == EOS) {
        return Err(LmError::InvalidConfig(format!("corpus may not contain {BOS} or {EOS}")));
    }
    if config.sentence_boundaries {
        words.push(EOS.to_string());
    }
    words.sort();
    words.dedup();
    let index: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();

    let h = config.order - 1;
    let pad = |body: Vec<u32>, eos: Option<u32>| {
        let mut ids = vec![BOS_ID; h];
        ids.extend(body);
        ids.extend(eos);
        ids
    };
    let to_ids = |s: &Vec<S>| -> Vec<u32> { s.iter().map(|t| index[t.as_ref()]).collect() };
    let streams: Vec<Vec<u32>> = if config.sentence_boundaries {
        let eos = index[EOS];
        corpus.iter().filter(|s| !s.is_empty()).map(|s| pad(to_ids(s), Some(eos))).collect()
    } else {
        vec![pad(corpus.iter().flat_map(to_ids).collect(), None)]
    };

    let mut lm = NgramLm {
        name: format!("ngram-{}", config.order),
        config,
        joiner: String::new(),
        vocab: words,
        index,
        counts: HashMap::new(),
        context_totals: HashMap::new(),
    };
    for ids in &streams {
        for i in h..ids.len() {
            lm.add_count(ids[i - h..i].to_vec(), ids[i], 1);
        }
    }
    Ok(lm)
}

#[derive(Serialize, Deserialize)]
struct NgramFile {
    format: String,
    version: u32,
    order: usize,
    delta: f64,
    sentence_boundaries: bool,
    joiner: String,
    vocab: Vec<String>,
    /// context (with `<s>` padding) → next token → count
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl NgramLm {
    fn add_count(&mut self, context: Vec<u32>, next: u32, n: u64) {
        *self.counts.entry(context.clone()).or_default().entry(next).or_insert(0) += n;
        *self.context_totals.entry(context).or_insert(0) += n;
    }

    pub fn config(&self) -> NgramConfig {
        self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Separator inserted between tokens by `complete`.
    pub fn with_joiner(mut self, joiner: impl Into<String>) -> Self {
        self.joiner = joiner.into();
        self
    }

    fn context_ids(&self, history: &[String]) -> Vec<u32> {
        let h = self.config.order - 1;
        let start = history.len().saturating_sub(h);
        let mut ids = vec![BOS_ID; h - (history.len() - start)];
        ids.extend(history[start..].iter().map(|t| self.index.get(t).copied().unwrap_or(UNK_ID)));
        ids
    }

    fn prob_id(&self, context: &[u32], next: u32) -> f64 {
        let v = self.vocab.len() as f64;
        let total = self.context_totals.get(context).copied().unwrap_or(0) as f64;
        let c = self.counts.get(context).and_then(|m| m.get(&next)).copied().unwrap_or(0) as f64;
        let denom = total + self.config.delta * v;
        if denom == 0.0 {
            1.0 / v
        } else {
            (c + self.config.delta) / denom
        }
    }

    /// P(token | history), using the last `order - 1` tokens of history
    /// (padded with `<s>`). Zero for out-of-vocabulary tokens.
    pub fn prob(&self, history: &[String], token: &str) -> f64 {
        match self.index.get(token) {
            Some(&id) => self.prob_id(&self.context_ids(history), id),
            None => 0.0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn text_of(&self, id: u32) -> &str {
        match id {
            BOS_ID => BOS,
            _ => &self.vocab[id as usize],
        }
    }

    pub fn to_json(&self) -> String {
        let counts = self
            .counts
            .iter()
            .map(|(ctx, nexts)| {
                let key = ctx.iter().map(|&i| self.text_of(i)).collect::<Vec<_>>().join(" ");
                let row = nexts.iter().map(|(&n, &c)| (self.text_of(n).to_string(), c)).collect();
                (key, row)
            })
            .collect();
        let file = NgramFile {
            format: FORMAT.into(),
            version: VERSION,
            order: self.config.order,
            delta: self.config.delta,
            sentence_boundaries: self.config.sentence_boundaries,
            joiner: self.joiner.clone(),
            vocab: self.vocab.clone(),
            counts,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let file: NgramFile = serde_json::from_str(text).map_err(|e| LmError::Model(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(LmError::Model(format!("unsupported model format {:?} version {}", file.format, file.version)));
        }
        if file.order == 0 {
            return Err(LmError::Model("order must be at least 1".into()));
        }
        let index: HashMap<String, u32> = file.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let config =
            NgramConfig { order: file.order, delta: file.delta, sentence_boundaries: file.sentence_boundaries };
        let mut lm = NgramLm {
            name: format!("ngram-{}", file.order),
            config,
            joiner: file.joiner,
            vocab: file.vocab,
            index,
            counts: HashMap::new(),
            context_totals: HashMap::new(),
        };
        let lookup = |t: &str, lm: &NgramLm| -> Result<u32, LmError> {
            if t == BOS {
                return Ok(BOS_ID);
            }
            lm.index.get(t).copied().ok_or_else(|| LmError::Model(format!("token {t:?} not in vocabulary")))
        };
        for (key, row) in file.counts {
            let ctx = if key.is_empty() {
                Vec::new()
            } else {
                key.split(' ').map(|t| lookup(t, &lm)).collect::<Result<Vec<_>, _>>()?
            };
            if ctx.len() != file.order - 1 {
                return Err(LmError::Model(format!("context {key:?} has wrong length")));
            }
            for (next, c) in row {
                let id = lookup(&next, &lm)?;
                lm.add_count(ctx.clone(), id, c);
            }
        }
        Ok(lm)
    }
}

impl LanguageModel for NgramLm {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_distributions(&self) -> bool {
        true
    }

    fn next_distribution(
        &self,
        _context: &ChatContext,
        prefix: &[String],
        k: usize,
    ) -> Result<NextTokenDistribution, LmError> {
        if k == 0 {
            return Err(LmError::InvalidConfig("k must be at least 1".into()));
        }
        let ctx = self.context_ids(prefix);
        let candidates = (0..self.vocab.len() as u32)
            .map(|id| Candidate {
                token_id: id,
                text: self.vocab[id as usize].clone(),
                log_prob: self.prob_id(&ctx, id).ln(),
            })
            .collect();
        Ok(NextTokenDistribution::top_k(candidates, k))
    }

    fn complete(&self, context: &ChatContext) -> Result<String, LmError> {
        let tokens = sampling::sample_base(self, context, context.generation.top_k)?;
        Ok(tokens.join(&self.joiner))
    }

    fn end_token(&self) -> Option<&str> {
        self.config.sentence_boundaries.then_some(EOS)
    }

    fn joiner(&self) -> &str {
        &self.joiner
    }
}

impl SequenceScorer for NgramLm {
    fn token_log_prob(&self, history: &[String], token: &str) -> f64 {
        self.prob(history, token).ln()
    }
}

/// Assigns 1/|V| to every vocabulary token regardless of context.
#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vec<String>,
}

impl UniformLm {
    pub fn new(vocab: Vec<String>) -> Result<Self, LmError> {
        if vocab.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        Ok(UniformLm { vocab })
    }
}

impl LanguageModel for UniformLm {
    fn name(&self) -> &str {
        "uniform"
    }

    fn supports_distributions(&self) -> bool {
        true
    }

    fn next_distribution(&self, _: &ChatContext, _: &[String], k: usize) -> Result<NextTokenDistribution, LmError> {
        if k == 0 {
            return Err(LmError::InvalidConfig("k must be at least 1".into()));
        }
        let lp = -(self.vocab.len() as f64).ln();
        let candidates = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate { token_id: i as u32, text: t.clone(), log_prob: lp })
            .collect();
        Ok(NextTokenDistribution::top_k(candidates, k))
    }

    fn complete(&self, context: &ChatContext) -> Result<String, LmError> {
        Ok(sampling::sample_base(self, context, context.generation.top_k)?.concat())
    }
}

impl SequenceScorer for UniformLm {
    fn token_log_prob(&self, _: &[String], token: &str) -> f64 {
        if self.vocab.iter().any(|t| t == token) {
            -(self.vocab.len() as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{perplexity, GenerationConfig, Perplexity, Role};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ctx(seed: u64) -> ChatContext {
        ChatContext::new("sys", Role::Tutor, GenerationConfig::tutor_default().with_seed(seed))
    }

    const FLAT: NgramConfig = NgramConfig { order: 2, delta: 0.0, sentence_boundaries: false };

    #[test]
    fn uniform_distribution_over_four() {
        let lm = UniformLm::new(toks("a b c d")).unwrap();
        let d = lm.next_distribution(&ctx(0), &[], 4).unwrap();
        assert_eq!(d.len(), 4);
        for c in &d.candidates {
            assert!((c.log_prob - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn bigram_ranks_b_after_a() {
        let lm = train_ngram(&[toks("a b a b")], FLAT).unwrap();
        let d = lm.next_distribution(&ctx(0), &toks("a"), 2).unwrap();
        assert_eq!(d.candidates[0].text, "b");
        assert_eq!(d.candidates[0].log_prob, 0.0);
    }

    #[test]
    fn k_beyond_vocabulary_returns_everything() {
        let lm = train_ngram(&[toks("a b c")], FLAT).unwrap();
        assert_eq!(lm.next_distribution(&ctx(0), &[], 50).unwrap().len(), 3);
    }

    #[test]
    fn unigram_maximum_likelihood() {
        let cfg = NgramConfig { order: 1, ..FLAT };
        let lm = train_ngram(&[toks("x x y x")], cfg).unwrap();
        assert_eq!(lm.prob(&[], "x"), 0.75);
        assert_eq!(lm.prob(&[], "y"), 0.25);
    }

    #[test]
    fn additive_smoothing_for_unseen_token() {
        // context "a" seen 3 times (N = 3), |V| = 3 → δ / (N + δ|V|) = 1/6
        let cfg = NgramConfig { delta: 1.0, ..FLAT };
        let lm = train_ngram(&[toks("a b a b a b c")], cfg).unwrap();
        assert!((lm.prob(&toks("a"), "c") - 1.0 / 6.0).abs() < 1e-15);
        assert!((lm.prob(&toks("a"), "b") - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(train_ngram(&empty, FLAT), Err(LmError::EmptyCorpus)));
    }

    #[test]
    fn unseen_context_without_smoothing_is_uniform() {
        let lm = train_ngram(&[toks("a b")], FLAT).unwrap();
        assert_eq!(lm.prob(&toks("zzz"), "a"), 0.5);
    }

    #[test]
    fn perplexity_of_deterministic_model_is_one() {
        let lm = train_ngram(&[toks("a b c")], FLAT).unwrap();
        let q = perplexity(&lm, &toks("a b c")).unwrap();
        // P(a|<s>)=1, P(b|a)=1, P(c|b)=1
        assert!((q.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_gives_infinite_perplexity() {
        let lm = train_ngram(&[toks("a b")], NgramConfig::default()).unwrap();
        assert_eq!(perplexity(&lm, &toks("a q")).unwrap(), Perplexity::Infinite);
    }

    #[test]
    fn seeded_completion_is_reproducible() {
        let corpus = vec![toks("私 は 学生 です 。"), toks("今日 は いい 天気 です 。")];
        let lm = train_ngram(&corpus, NgramConfig::default()).unwrap();
        assert_eq!(lm.complete(&ctx(3)).unwrap(), lm.complete(&ctx(3)).unwrap());
    }

    #[test]
    fn max_tokens_one_yields_single_token() {
        let lm = train_ngram(&[toks("a b c d e")], FLAT).unwrap().with_joiner(" ");
        let mut c = ctx(1);
        c.generation.max_tokens = 1;
        let out = lm.complete(&c).unwrap();
        assert_eq!(out.split(' ').count(), 1);
    }

    #[test]
    fn json_round_trip_preserves_probabilities() {
        let corpus = vec![toks("a b a c"), toks("c a b")];
        let cfg = NgramConfig { order: 3, delta: 0.5, sentence_boundaries: true };
        let lm = train_ngram(&corpus, cfg).unwrap().with_joiner(" ");
        let back = NgramLm::from_json(&lm.to_json()).unwrap();
        assert_eq!(back.to_json(), lm.to_json());
        for h in [toks(""), toks("a"), toks("a b"), toks("c a")] {
            for w in lm.vocab() {
                assert_eq!(lm.prob(&h, w), back.prob(&h, w));
            }
        }
    }
}
