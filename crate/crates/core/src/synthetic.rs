//! Synthetic register corpora for tests, demos and the toy CLI mode.
//!
//! Each level owns a small disjoint content vocabulary; particles are shared
//! by all levels and binned at N5. Sentences alternate content words and
//! particles and are written space-separated, so any tokenizer that splits on
//! whitespace recovers them exactly.
//!
//! The LM corpus mixes only two registers, easy (N5) and hard (N1), with the
//! hard register in the majority so an uncontrolled model starts well above
//! an N5 learner's level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{self, LabeledSentence, Predictor, TrainConfig, TrainReport};
use crate::level::Level;
use crate::lexicon::{LevelLexicon, LexiconEntry, Provenance};
use crate::lm::{train_ngram, NgramConfig, NgramLm};
use crate::tokenizer::DictionaryTokenizer;

pub const PARTICLES: [&str; 6] = ["は", "が", "を", "に", "で", "も"];

const WORDS: [[&str; 8]; 5] = [
    ["猫", "犬", "水", "本", "私", "先生", "学校", "食べる"],
    ["台所", "運動", "急ぐ", "集める", "写真", "世界", "計画", "届ける"],
    ["経済", "政治", "状況", "確認", "提案", "議論", "影響", "与える"],
    ["傾向", "範囲", "効率", "維持", "妥当", "促進", "需要", "伴う"],
    ["懸念", "把握", "措置", "顕著", "是正", "逸脱", "緩和", "覆す"],
];

/// Content words that define `level`'s register.
pub fn words(level: Level) -> &'static [&'static str] {
    &WORDS[level.index()]
}

/// Every content word at its own level plus the particles at N5.
pub fn lexicon() -> LevelLexicon {
    let entries = Level::ALL
        .into_iter()
        .flat_map(|l| words(l).iter().map(move |w| (*w, l)))
        .chain(PARTICLES.iter().map(|p| (*p, Level::N5)))
        .map(|(lemma, level)| LexiconEntry { lemma: lemma.to_string(), level, meaning: None });
    LevelLexicon::from_entries(entries, Provenance::GoldDeck, "synthetic-registers-v1")
        .expect("synthetic vocabulary is valid")
}

pub fn tokenizer() -> DictionaryTokenizer {
    DictionaryTokenizer::from_lexicon(&lexicon())
}

/// One sentence of 2..=4 content words joined by particles. Each content
/// word is drawn from `register` with probability `purity`, otherwise from a
/// uniformly chosen level.
pub fn sentence<R: Rng>(register: Level, purity: f64, rng: &mut R) -> Vec<String> {
    sentence_with(register, purity, 4, rng)
}

/// [`sentence`] with 2..=`max_words` content words.
pub fn sentence_with<R: Rng>(register: Level, purity: f64, max_words: usize, rng: &mut R) -> Vec<String> {
    let n = rng.gen_range(2..=max_words.max(2));
    let mut out = Vec::with_capacity(2 * n - 1);
    for i in 0..n {
        if i > 0 {
            out.push(PARTICLES[rng.gen_range(0..PARTICLES.len())].to_string());
        }
        let level = if rng.gen_bool(purity) { register } else { Level::ALL[rng.gen_range(0..5)] };
        let pool = words(level);
        out.push(pool[rng.gen_range(0..pool.len())].to_string());
    }
    out
}

/// `per_level` pure-register sentences for every level, in level order.
pub fn level_corpus(per_level: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Level::ALL
        .into_iter()
        .flat_map(|level| {
            (0..per_level)
                .map(|_| LabeledSentence { tokens: sentence(level, 1.0, &mut rng), level })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `per_level` mixed-register sentences of up to 8 content words for every
/// register, each labeled with the level of its hardest word.
pub fn graded_corpus(per_level: usize, purity: f64, seed: u64) -> Vec<LabeledSentence> {
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_level * Level::ALL.len());
    for register in Level::ALL {
        for _ in 0..per_level {
            let tokens = sentence_with(register, purity, 8, &mut rng);
            let level = tokens.iter().filter_map(|t| lex.lookup(t)).max().expect("synthetic words are all binned");
            out.push(LabeledSentence { tokens, level });
        }
    }
    out
}

/// Two-register LM training corpus: each sentence is pure N1 with
/// probability `hard_fraction`, otherwise pure N5.
pub fn lm_corpus(sentences: usize, hard_fraction: f64, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            let level = if rng.gen_bool(hard_fraction) { Level::N1 } else { Level::N5 };
            sentence(level, 1.0, &mut rng)
        })
        .collect()
}

/// Bigram LM over [`lm_corpus`] with sentence boundaries and a space joiner.
pub fn toy_lm(seed: u64) -> NgramLm {
    let cfg = NgramConfig { order: 2, delta: 0.01, sentence_boundaries: true };
    train_ngram(&lm_corpus(400, 0.7, seed), cfg)
        .expect("synthetic corpus is non-empty")
        .with_name("toy-bigram")
        .with_joiner(" ")
}

/// Training settings that converge on the synthetic corpora; the library
/// default learning rate is far too small for a model trained from scratch
/// on this little data.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 16, learning_rate: 0.02, embedding_dim: 16, init_scale: 0.1, seed }
}

/// Predictor trained on the pure-register [`level_corpus`].
pub fn register_predictor(seed: u64) -> (Predictor, TrainReport) {
    classifier::train_from_sentences(&level_corpus(60, seed), toy_train_config(seed))
        .expect("synthetic corpus covers every level")
}

/// Predictor trained on [`graded_corpus`], so that a single hard word in an
/// otherwise easy prefix already makes the easy level unlikely.
pub fn toy_predictor(seed: u64) -> (Predictor, TrainReport) {
    let cfg = TrainConfig { epochs: 10, learning_rate: 0.05, ..toy_train_config(seed) };
    classifier::train_from_sentences(&graded_corpus(800, 0.5, seed), cfg).expect("synthetic corpus covers every level")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Tokenizer;

    #[test]
    fn registers_are_disjoint_and_binned() {
        let lex = lexicon();
        for level in Level::ALL {
            for w in words(level) {
                assert_eq!(lex.lookup(w), Some(level));
            }
        }
        assert_eq!(lex.len(), 5 * 8 + PARTICLES.len());
    }

    #[test]
    fn whitespace_text_round_trips_through_tokenizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tok = tokenizer();
        for _ in 0..50 {
            let s = sentence(Level::N3, 0.5, &mut rng);
            let utt = tok.tokenize(&s.join(" ")).unwrap();
            assert_eq!(utt.lemmas(), s.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }

    #[test]
    fn lm_corpus_is_mostly_hard() {
        let corpus = lm_corpus(1000, 0.7, 1);
        let hard = corpus.iter().filter(|s| words(Level::N1).contains(&s[0].as_str())).count();
        assert!((600..800).contains(&hard), "{hard}");
    }
}
