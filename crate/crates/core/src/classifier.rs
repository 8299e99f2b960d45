//! Prefix difficulty predictor.
//!
//! Estimates P(level | x₁..xᵢ): the level of the full utterance a prefix will
//! grow into. Trained on every prefix of every level-tagged sentence, so the
//! same model serves FUDGE (partial prefixes) and whole-utterance scoring.
//!
//! The model averages learned token embeddings over the prefix and applies a
//! linear layer to five logits. Out-of-vocabulary tokens embed to zero but
//! still count toward the average. All parameters live in one flat vector laid
//! out as `[embeddings | weights | bias]`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::level::Level;
use crate::lm::log_sum_exp;
use crate::tokenizer::{TokenizeError, Tokenizer};

pub const NUM_LEVELS: usize = 5;

const FORMAT: &str = "gradechat-predictor";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("no training examples for level {0}")]
    EmptyLevel(Level),
    #[error("training needs at least two distinct levels, found {0}")]
    SingleClass(usize),
    #[error("prefix must contain at least one token")]
    EmptyPrefix,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixExample {
    pub prefix: Vec<String>,
    pub label: Level,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub level: Level,
}

/// All prefixes x₁..x₁, x₁..x₂, … x₁..xₙ, each labeled with the sentence's level.
pub fn expand_prefixes<S: AsRef<str>>(sentence: &[S], label: Level) -> Vec<PrefixExample> {
    (1..=sentence.len())
        .map(|i| PrefixExample { prefix: sentence[..i].iter().map(|t| t.as_ref().to_string()).collect(), label })
        .collect()
}

/// Downsamples every level to the size of the smallest one, uniformly
/// without replacement. Survivors keep their original relative order.
pub fn balance_by_downsampling(
    sentences: &[LabeledSentence],
    seed: u64,
) -> Result<Vec<LabeledSentence>, ClassifierError> {
    let mut groups: BTreeMap<Level, Vec<usize>> = Level::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for (i, s) in sentences.iter().enumerate() {
        groups.get_mut(&s.level).expect("all levels present").push(i);
    }
    if let Some((&level, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(ClassifierError::EmptyLevel(level));
    }
    let min = groups.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(min * NUM_LEVELS);
    for idx in groups.values() {
        let mut chosen: Vec<usize> =
            rand::seq::index::sample(&mut rng, idx.len(), min).into_iter().map(|j| idx[j]).collect();
        chosen.sort_unstable();
        keep.extend(chosen);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| sentences[i].clone()).collect())
}

/// Log-probabilities over N5..N1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyDistribution {
    pub log_probs: [f64; NUM_LEVELS],
}

/// How a difficulty distribution collapses to a scalar level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Expected,
    Argmax,
}

impl DifficultyDistribution {
    pub fn from_logits(logits: [f64; NUM_LEVELS]) -> Self {
        let z = log_sum_exp(logits);
        DifficultyDistribution { log_probs: logits.map(|l| l - z) }
    }

    pub fn from_probs(probs: [f64; NUM_LEVELS]) -> Self {
        Self::from_logits(probs.map(f64::ln))
    }

    pub fn probs(&self) -> [f64; NUM_LEVELS] {
        self.log_probs.map(f64::exp)
    }

    pub fn log_prob(&self, level: Level) -> f64 {
        self.log_probs[level.index()]
    }

    /// Σ ℓ·P(ℓ), in [1, 5].
    pub fn expected_level(&self) -> f64 {
        self.probs().iter().zip(Level::ALL).map(|(p, l)| p * l.value() as f64).sum()
    }

    /// Most likely level; ties go to the easier level.
    pub fn argmax(&self) -> Level {
        let mut best = 0;
        for i in 1..NUM_LEVELS {
            if self.log_probs[i] > self.log_probs[best] {
                best = i;
            }
        }
        Level::ALL[best]
    }

    pub fn score(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Expected => self.expected_level(),
            ScoreMode::Argmax => self.argmax().value() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 3, batch_size: 16, learning_rate: 5e-5, embedding_dim: 32, init_scale: 0.1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes"))
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1");
        }
        Ok(())
    }
}

/// Mean training loss after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
}

/// Running summary of a prefix: the sum of its token embeddings, its
/// length, and how many of its tokens are in the predictor's vocabulary.
/// The mean is taken over known tokens only, so out-of-vocabulary tokens
/// carry no signal instead of pulling every prediction toward the bias.
/// Extending by one token is O(d).
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    sum: Vec<f64>,
    len: usize,
    known: usize,
}

impl PrefixState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    params: Vec<f64>,
    train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    format: String,
    version: u32,
    embedding_dim: usize,
    vocab: Vec<String>,
    params: Vec<f64>,
    train_config: TrainConfig,
    train_config_digest: String,
}

impl Predictor {
    /// Fresh model with small random weights and zero bias.
    pub fn init(vocab: Vec<String>, config: TrainConfig) -> Self {
        let dim = config.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = vocab.len() * dim + NUM_LEVELS * dim;
        let mut params: Vec<f64> = (0..n).map(|_| rng.gen_range(-config.init_scale..=config.init_scale)).collect();
        params.extend([0.0; NUM_LEVELS]);
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Predictor { vocab, index, dim, params, train_config: config }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w_offset(&self) -> usize {
        self.vocab.len() * self.dim
    }

    fn b_offset(&self) -> usize {
        self.w_offset() + NUM_LEVELS * self.dim
    }

    fn embedding(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| &self.params[i * self.dim..(i + 1) * self.dim])
    }

    pub fn empty_state(&self) -> PrefixState {
        PrefixState { sum: vec![0.0; self.dim], len: 0, known: 0 }
    }

    pub fn push(&self, state: &mut PrefixState, token: &str) {
        if let Some(e) = self.embedding(token) {
            for (s, v) in state.sum.iter_mut().zip(e) {
                *s += v;
            }
            state.known += 1;
        }
        state.len += 1;
    }

    pub fn state<S: AsRef<str>>(&self, prefix: &[S]) -> PrefixState {
        let mut st = self.empty_state();
        for t in prefix {
            self.push(&mut st, t.as_ref());
        }
        st
    }

    /// Logits of the mean of `known` embeddings summing to `sum`; the bias
    /// alone when no token is known.
    fn logits_from_sum(&self, sum: &[f64], known: usize) -> [f64; NUM_LEVELS] {
        let w = &self.params[self.w_offset()..self.b_offset()];
        let b = &self.params[self.b_offset()..];
        let inv = if known == 0 { 0.0 } else { 1.0 / known as f64 };
        let mut z = [0.0; NUM_LEVELS];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w[c * self.dim..(c + 1) * self.dim];
            *zc = b[c] + inv * row.iter().zip(sum).map(|(a, s)| a * s).sum::<f64>();
        }
        z
    }

    pub fn predict_state(&self, state: &PrefixState) -> Result<DifficultyDistribution, ClassifierError> {
        if state.len == 0 {
            return Err(ClassifierError::EmptyPrefix);
        }
        Ok(DifficultyDistribution::from_logits(self.logits_from_sum(&state.sum, state.known)))
    }

    pub fn predict_prefix<S: AsRef<str>>(&self, prefix: &[S]) -> Result<DifficultyDistribution, ClassifierError> {
        self.predict_state(&self.state(prefix))
    }

    /// log P(target | prefix + c) for each candidate token c, reusing the
    /// prefix summary so each candidate costs O(d).
    pub fn score_extensions<S: AsRef<str>>(&self, state: &PrefixState, candidates: &[S], target: Level) -> Vec<f64> {
        let mut sum = state.sum.clone();
        candidates
            .iter()
            .map(|c| {
                let logits = match self.embedding(c.as_ref()) {
                    Some(e) => {
                        for ((s, base), v) in sum.iter_mut().zip(&state.sum).zip(e) {
                            *s = base + v;
                        }
                        self.logits_from_sum(&sum, state.known + 1)
                    }
                    None => self.logits_from_sum(&state.sum, state.known),
                };
                DifficultyDistribution::from_logits(logits).log_prob(target)
            })
            .collect()
    }

    /// Scalar difficulty s(x) in [1, 5] of a full utterance.
    pub fn score_tokens<S: AsRef<str>>(&self, tokens: &[S], mode: ScoreMode) -> Result<f64, ClassifierError> {
        Ok(self.predict_prefix(tokens)?.score(mode))
    }

    pub fn score_utterance(
        &self,
        tokenizer: &dyn Tokenizer,
        text: &str,
        mode: ScoreMode,
    ) -> Result<f64, ClassifierError> {
        let utt = tokenizer.tokenize(text)?;
        self.score_tokens(&utt.lemmas(), mode)
    }

    /// Mean cross-entropy of `examples` under `params`.
    pub fn loss_with(&self, params: &[f64], examples: &[PrefixExample]) -> f64 {
        let mut probe = self.clone();
        probe.params.copy_from_slice(params);
        probe.loss_and_gradient(examples).0
    }

    /// Mean cross-entropy over `examples` and its gradient with respect to
    /// the flat parameter vector.
    pub fn loss_and_gradient(&self, examples: &[PrefixExample]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        if examples.is_empty() {
            return (0.0, grad);
        }
        let (wo, bo, d) = (self.w_offset(), self.b_offset(), self.dim);
        let scale = 1.0 / examples.len() as f64;
        let mut loss = 0.0;
        let mut ids: Vec<usize> = Vec::new();
        for ex in examples {
            let st = self.state(&ex.prefix);
            let n = st.known.max(1) as f64;
            let dist = DifficultyDistribution::from_logits(self.logits_from_sum(&st.sum, st.known));
            let y = ex.label.index();
            loss -= dist.log_probs[y];
            let mut dz = dist.probs();
            dz[y] -= 1.0;
            let h: Vec<f64> = st.sum.iter().map(|s| s / n).collect();
            let mut dh = vec![0.0; d];
            for c in 0..NUM_LEVELS {
                let g = dz[c] * scale;
                grad[bo + c] += g;
                for j in 0..d {
                    grad[wo + c * d + j] += g * h[j];
                    dh[j] += g * self.params[wo + c * d + j];
                }
            }
            ids.clear();
            ids.extend(ex.prefix.iter().filter_map(|t| self.index.get(t.as_str()).copied()));
            for &i in &ids {
                for j in 0..d {
                    grad[i * d + j] += dh[j] / n;
                }
            }
        }
        (loss * scale, grad)
    }

    pub fn to_json(&self) -> String {
        let file = PredictorFile {
            format: FORMAT.into(),
            version: VERSION,
            embedding_dim: self.dim,
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            train_config: self.train_config,
            train_config_digest: self.train_config.digest(),
        };
        let mut s = serde_json::to_string(&file).expect("predictor serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: PredictorFile = serde_json::from_str(text).map_err(|e| ClassifierError::Model(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(ClassifierError::Model(format!(
                "unsupported predictor format {:?} version {}",
                file.format, file.version
            )));
        }
        let expected = (file.vocab.len() + NUM_LEVELS) * file.embedding_dim + NUM_LEVELS;
        if file.params.len() != expected || file.embedding_dim == 0 {
            return Err(ClassifierError::Model(format!("expected {expected} parameters, found {}", file.params.len())));
        }
        if file.train_config_digest != file.train_config.digest() {
            return Err(ClassifierError::Model("training config digest mismatch".into()));
        }
        let index = file.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Predictor {
            vocab: file.vocab,
            index,
            dim: file.embedding_dim,
            params: file.params,
            train_config: file.train_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Mini-batch Adam on the mean cross-entropy of `examples`.
pub fn train(examples: &[PrefixExample], config: TrainConfig) -> Result<(Predictor, TrainReport), ClassifierError> {
    config.validate()?;
    if examples.iter().any(|e| e.prefix.is_empty()) {
        return Err(ClassifierError::EmptyPrefix);
    }
    let mut labels: Vec<Level> = examples.iter().map(|e| e.label).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(ClassifierError::SingleClass(labels.len()));
    }
    let mut vocab: Vec<String> = examples.iter().flat_map(|e| e.prefix.iter().cloned()).collect();
    vocab.sort();
    vocab.dedup();

    let mut model = Predictor::init(vocab, config);
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; model.params.len()];
    let mut v = vec![0.0; model.params.len()];
    let mut t = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch: Vec<PrefixExample> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (_, g) = model.loss_and_gradient(&batch);
            t += 1;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                model.params[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        epoch_losses.push(model.loss_and_gradient(examples).0);
    }
    Ok((model, TrainReport { epoch_losses, examples: examples.len() }))
}

/// Balances sentences, expands every prefix, and trains.
pub fn train_from_sentences(
    sentences: &[LabeledSentence],
    config: TrainConfig,
) -> Result<(Predictor, TrainReport), ClassifierError> {
    let balanced = balance_by_downsampling(sentences, config.seed)?;
    let examples: Vec<PrefixExample> = balanced.iter().flat_map(|s| expand_prefixes(&s.tokens, s.level)).collect();
    train(&examples, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str, level: Level) -> LabeledSentence {
        LabeledSentence { tokens: s.split_whitespace().map(String::from).collect(), level }
    }

    #[test]
    fn three_token_sentence_expands_to_three_examples() {
        let ex = expand_prefixes(&["a", "b", "c"], Level::N4);
        assert_eq!(ex.len(), 3);
        assert!(ex.iter().all(|e| e.label.value() == 2));
        assert_eq!(ex[1].prefix, ["a", "b"]);
        assert_eq!(expand_prefixes(&["x"], Level::N1).len(), 1);
    }

    #[test]
    fn downsampling_follows_min_rule() {
        let mut corpus = Vec::new();
        for (level, n) in Level::ALL.into_iter().zip([10, 4, 7, 9, 5]) {
            for i in 0..n {
                corpus.push(sent(&format!("w{i}"), level));
            }
        }
        let out = balance_by_downsampling(&corpus, 3).unwrap();
        for level in Level::ALL {
            assert_eq!(out.iter().filter(|s| s.level == level).count(), 4);
        }
        assert_eq!(out, balance_by_downsampling(&corpus, 3).unwrap());
    }

    #[test]
    fn balanced_input_is_a_fixed_point() {
        let corpus: Vec<_> = Level::ALL.into_iter().map(|l| sent("a b", l)).collect();
        assert_eq!(balance_by_downsampling(&corpus, 0).unwrap(), corpus);
    }

    #[test]
    fn missing_level_is_named() {
        let corpus = vec![sent("a", Level::N5), sent("b", Level::N1)];
        let err = balance_by_downsampling(&corpus, 0).unwrap_err();
        assert!(err.to_string().contains("N4"));
    }

    #[test]
    fn expected_level_examples() {
        let one_hot = DifficultyDistribution::from_probs([0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(one_hot.expected_level(), 3.0);
        let uniform = DifficultyDistribution::from_probs([0.2; 5]);
        assert!((uniform.expected_level() - 3.0).abs() < 1e-12);
        let split = DifficultyDistribution::from_probs([0.5, 0.0, 0.0, 0.0, 0.5]);
        assert!((split.expected_level() - 3.0).abs() < 1e-12);
        assert_eq!(split.argmax(), Level::N5);
    }

    #[test]
    fn single_class_and_empty_prefix_are_rejected() {
        let ex = expand_prefixes(&["a", "b"], Level::N5);
        assert!(matches!(train(&ex, TrainConfig::default()), Err(ClassifierError::SingleClass(1))));
        let (model, _) = train(
            &[expand_prefixes(&["a"], Level::N5), expand_prefixes(&["b"], Level::N1)].concat(),
            TrainConfig::default(),
        )
        .unwrap();
        assert!(matches!(model.predict_prefix::<&str>(&[]), Err(ClassifierError::EmptyPrefix)));
    }

    #[test]
    fn incremental_scoring_matches_full_recompute() {
        let ex = [expand_prefixes(&["a", "b", "c"], Level::N5), expand_prefixes(&["d", "e"], Level::N2)].concat();
        let (model, _) = train(&ex, TrainConfig { learning_rate: 0.05, ..Default::default() }).unwrap();
        let prefix = ["a", "d"];
        let st = model.state(&prefix);
        let cands = ["b", "e", "unknown"];
        let fast = model.score_extensions(&st, &cands, Level::N5);
        for (c, f) in cands.iter().zip(fast) {
            let slow = model.predict_prefix(&[prefix[0], prefix[1], c]).unwrap().log_prob(Level::N5);
            assert!((f - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let ex = [expand_prefixes(&["a"], Level::N5), expand_prefixes(&["b"], Level::N3)].concat();
        let (model, _) = train(&ex, TrainConfig { embedding_dim: 4, ..Default::default() }).unwrap();
        let back = Predictor::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }
}
