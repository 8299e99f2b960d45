//! Leveled vocabularies.
//!
//! A [`LevelLexicon`] maps NFKC-normalized lemmas to exactly one JLPT level.
//! Two builders exist:
//!
//! - gold lexicons parsed from flashcard decks ([`build_gold_lexicon`]), the
//!   ground truth for Token Miss Rate;
//! - heuristic bins derived from a level-tagged corpus by relative frequency
//!   ([`accumulate_corpus_stats`] then [`derive_heuristic_bins`]), used for
//!   overgenerate reranking and the detailed prompt's known expressions.
//!
//! Lookups are exact-match after normalization. A lemma missing from the
//! lexicon is *unbinned* (`None`), never an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfkc_quick, IsNormalized, UnicodeNormalization};

use crate::digest::PartsDigest;
use crate::level::Level;
use crate::tokenizer::{TokenizeError, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("no vocabulary parsed from the given decks")]
    NoVocabulary,
    #[error("no {level} input found in {dir}", dir = .dir.display())]
    MissingLevel { level: Level, dir: PathBuf },
    #[error("{path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}", path = .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid lexicon: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LexiconError + '_ {
    move |source| LexiconError::Io { path: path.to_path_buf(), source }
}

/// NFKC normal form, the canonical form for every stored and looked-up lemma.
pub fn normalize(s: &str) -> String {
    s.nfkc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lemma: String,
    pub level: Level,
    pub meaning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GoldDeck,
    CorpusHeuristic,
}

/// Immutable lemma → level map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelLexicon {
    entries: BTreeMap<String, LexiconEntry>,
    provenance: Provenance,
    source_digest: String,
}

/// Value shape of the per-level JSON files: `{"会う": {"meaning": "to meet"}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct LevelFileValue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meaning: Option<String>,
}

const LEXICON_FORMAT: &str = "gradechat-lexicon";
const LEXICON_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    format: String,
    version: u32,
    provenance: Provenance,
    source_digest: String,
    entries: BTreeMap<String, LexiconFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct LexiconFileEntry {
    level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meaning: Option<String>,
}

impl LevelLexicon {
    /// Builds a lexicon from entries, keeping the easiest level when a lemma
    /// occurs more than once (first meaning wins at equal level).
    pub fn from_entries(
        entries: impl IntoIterator<Item = LexiconEntry>,
        provenance: Provenance,
        source_digest: impl Into<String>,
    ) -> Result<Self, LexiconError> {
        let mut map: BTreeMap<String, LexiconEntry> = BTreeMap::new();
        for mut entry in entries {
            entry.lemma = normalize(&entry.lemma);
            if entry.lemma.is_empty() || entry.lemma.contains(['\t', '\n', '\r']) {
                return Err(LexiconError::Invalid(format!("lemma {:?} is empty or contains tab/newline", entry.lemma)));
            }
            match map.get_mut(&entry.lemma) {
                Some(existing) if entry.level < existing.level => *existing = entry,
                Some(_) => {}
                None => {
                    map.insert(entry.lemma.clone(), entry);
                }
            }
        }
        Ok(LevelLexicon { entries: map, provenance, source_digest: source_digest.into() })
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact-match lookup; `None` means unbinned.
    pub fn lookup(&self, lemma: &str) -> Option<Level> {
        self.entry(lemma).map(|e| e.level)
    }

    pub fn entry(&self, lemma: &str) -> Option<&LexiconEntry> {
        match is_nfkc_quick(lemma.chars()) {
            IsNormalized::Yes => self.entries.get(lemma),
            _ => self.entries.get(&normalize(lemma)),
        }
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    /// Entries at exactly `level`, in lemma order.
    pub fn at_level(&self, level: Level) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values().filter(move |e| e.level == level)
    }

    /// Per-level JSON in the flashcard-export shape, keys sorted, two-space
    /// indentation, trailing newline.
    pub fn to_level_json(&self, level: Level) -> String {
        let map: BTreeMap<&str, LevelFileValue> =
            self.at_level(level).map(|e| (e.lemma.as_str(), LevelFileValue { meaning: e.meaning.clone() })).collect();
        let mut s = serde_json::to_string_pretty(&map).expect("string map serializes");
        s.push('\n');
        s
    }

    /// Writes `n5.json` … `n1.json` into `dir` and returns the paths.
    pub fn write_level_files(&self, dir: &Path) -> Result<Vec<PathBuf>, LexiconError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for level in Level::ALL {
            let path = dir.join(format!("{}.json", level.file_stem()));
            fs::write(&path, self.to_level_json(level)).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Reads per-level JSON files from `dir`; every level file must exist.
    pub fn read_level_files(dir: &Path, provenance: Provenance) -> Result<Self, LexiconError> {
        let mut digest = PartsDigest::new();
        let mut entries = Vec::new();
        for level in Level::ALL {
            let path = dir.join(format!("{}.json", level.file_stem()));
            if !path.is_file() {
                return Err(LexiconError::MissingLevel { level, dir: dir.to_path_buf() });
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            digest.part(level.label()).part(&text);
            let map: BTreeMap<String, LevelFileValue> =
                serde_json::from_str(&text).map_err(|source| LexiconError::Json { path: path.clone(), source })?;
            entries.extend(map.into_iter().map(|(lemma, v)| LexiconEntry { lemma, level, meaning: v.meaning }));
        }
        Self::from_entries(entries, provenance, digest.finish())
    }

    /// Whole-lexicon serialization including provenance and digest.
    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            format: LEXICON_FORMAT.to_string(),
            version: LEXICON_VERSION,
            provenance: self.provenance,
            source_digest: self.source_digest.clone(),
            entries: self
                .entries
                .values()
                .map(|e| (e.lemma.clone(), LexiconFileEntry { level: e.level, meaning: e.meaning.clone() }))
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("lexicon serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text)
            .map_err(|source| LexiconError::Json { path: PathBuf::from("<lexicon>"), source })?;
        if file.format != LEXICON_FORMAT || file.version != LEXICON_VERSION {
            return Err(LexiconError::Invalid(format!("unsupported lexicon format {} v{}", file.format, file.version)));
        }
        let entries =
            file.entries.into_iter().map(|(lemma, e)| LexiconEntry { lemma, level: e.level, meaning: e.meaning });
        Self::from_entries(entries, file.provenance, file.source_digest)
    }
}

// ---------------------------------------------------------------------------
// Flashcard decks

/// One raw flashcard: expression, optional reading, English gloss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Card {
    pub expression: String,
    pub reading: Option<String>,
    pub gloss: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deck {
    pub level: Level,
    pub cards: Vec<Card>,
    /// Lines that could not be split into fields.
    pub malformed: usize,
}

/// Why a card produced no entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DeckSkip {
    #[error("missing expression")]
    MissingExpression,
    #[error("missing gloss")]
    MissingGloss,
}

/// A normalized lemma with its gloss, before a level is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedEntry {
    pub lemma: String,
    pub meaning: String,
}

fn is_tilde_like(c: char) -> bool {
    matches!(c, '~' | '〜' | '～' | '〰' | '∼' | '⁓')
}

fn is_alternative_separator(c: char) -> bool {
    matches!(c, '、' | ',' | ';' | '/' | '，' | '；' | '／')
}

fn is_hiragana(c: char) -> bool {
    matches!(c, '\u{3041}'..='\u{3096}' | '\u{309D}'..='\u{309F}')
}

/// Expands one expression or reading field into its normalized forms:
/// parentheses unified, tildes stripped, alternatives split, and each
/// parenthetical expanded to the outside form and the full form.
fn expand_field(raw: &str) -> Vec<String> {
    let unified: String = normalize(raw)
        .chars()
        .map(|c| match c {
            '（' => '(',
            '）' => ')',
            c => c,
        })
        .filter(|c| !is_tilde_like(*c))
        .collect();
    let mut forms = Vec::new();
    for alt in unified.split(is_alternative_separator) {
        let alt: String = alt.chars().filter(|c| !c.is_whitespace()).collect();
        let mut outside = String::new();
        let mut full = String::new();
        let mut depth = 0usize;
        for c in alt.chars() {
            match c {
                '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                c => {
                    full.push(c);
                    if depth == 0 {
                        outside.push(c);
                    }
                }
            }
        }
        for form in [outside, full] {
            if !form.is_empty() && !forms.contains(&form) {
                forms.push(form);
            }
        }
    }
    forms
}

/// Normalizes one flashcard into lexicon forms.
///
/// Readings are added as standalone forms unless they are a single hiragana
/// character or duplicate one of the expression's forms. `Ok(vec![])` means
/// the card was filtered out entirely.
pub fn parse_deck_entry(
    raw_expression: &str,
    raw_reading: Option<&str>,
    gloss: &str,
) -> Result<Vec<ParsedEntry>, DeckSkip> {
    let expression = raw_expression.trim();
    if expression.is_empty() {
        return Err(DeckSkip::MissingExpression);
    }
    let gloss = gloss.trim();
    if gloss.is_empty() {
        return Err(DeckSkip::MissingGloss);
    }
    let mut forms = expand_field(expression);
    if let Some(reading) = raw_reading.map(str::trim).filter(|r| !r.is_empty()) {
        for form in expand_field(reading) {
            let mut chars = form.chars();
            let single_hiragana = matches!((chars.next(), chars.next()), (Some(c), None) if is_hiragana(c));
            if single_hiragana || forms.contains(&form) {
                continue;
            }
            forms.push(form);
        }
    }
    Ok(forms.into_iter().map(|lemma| ParsedEntry { lemma, meaning: gloss.to_string() }).collect())
}

/// Parses a tab-separated card dump: `expression<TAB>reading<TAB>gloss` or
/// `expression<TAB>gloss`. Blank lines and `#` header lines are ignored.
pub fn parse_tsv_deck(level: Level, text: &str) -> Deck {
    let mut cards = Vec::new();
    let mut malformed = 0;
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let card = match fields.as_slice() {
            [expression, reading, gloss] => Card {
                expression: expression.to_string(),
                reading: Some(reading.to_string()).filter(|r| !r.trim().is_empty()),
                gloss: gloss.to_string(),
            },
            [expression, gloss] => Card { expression: expression.to_string(), reading: None, gloss: gloss.to_string() },
            _ => {
                malformed += 1;
                continue;
            }
        };
        cards.push(card);
    }
    Deck { level, cards, malformed }
}

/// Parses a JSON deck in the per-level export shape (`lemma → {"meaning"}`).
pub fn parse_json_deck(level: Level, text: &str) -> Result<Deck, serde_json::Error> {
    let map: BTreeMap<String, LevelFileValue> = serde_json::from_str(text)?;
    let cards = map
        .into_iter()
        .map(|(expression, v)| Card { expression, reading: None, gloss: v.meaning.unwrap_or_default() })
        .collect();
    Ok(Deck { level, cards, malformed: 0 })
}

/// Loads every `n5`…`n1` deck found in `dir` (`.tsv` preferred over `.json`).
/// Levels without a file are skipped; an empty directory is an error.
pub fn load_deck_dir(dir: &Path) -> Result<Vec<Deck>, LexiconError> {
    if !dir.is_dir() {
        return Err(LexiconError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "deck directory not found"),
        });
    }
    let mut decks = Vec::new();
    for level in Level::ALL {
        let tsv = dir.join(format!("{}.tsv", level.file_stem()));
        let json = dir.join(format!("{}.json", level.file_stem()));
        if tsv.is_file() {
            let text = fs::read_to_string(&tsv).map_err(io_err(&tsv))?;
            decks.push(parse_tsv_deck(level, &text));
        } else if json.is_file() {
            let text = fs::read_to_string(&json).map_err(io_err(&json))?;
            let deck =
                parse_json_deck(level, &text).map_err(|source| LexiconError::Json { path: json.clone(), source })?;
            decks.push(deck);
        }
    }
    if decks.is_empty() {
        return Err(LexiconError::MissingLevel { level: Level::N5, dir: dir.to_path_buf() });
    }
    Ok(decks)
}

/// Union of all parsed deck entries; duplicates resolve to the easiest level.
pub fn build_gold_lexicon(decks: &[Deck]) -> Result<LevelLexicon, LexiconError> {
    let mut digest = PartsDigest::new();
    let mut entries = Vec::new();
    for deck in decks {
        digest.part(deck.level.label());
        for card in &deck.cards {
            digest.part(&card.expression).part(card.reading.as_deref().unwrap_or("")).part(&card.gloss);
            let Ok(parsed) = parse_deck_entry(&card.expression, card.reading.as_deref(), &card.gloss) else {
                continue;
            };
            entries.extend(parsed.into_iter().map(|p| LexiconEntry {
                lemma: p.lemma,
                level: deck.level,
                meaning: Some(p.meaning),
            }));
        }
    }
    if entries.is_empty() {
        return Err(LexiconError::NoVocabulary);
    }
    LevelLexicon::from_entries(entries, Provenance::GoldDeck, digest.finish())
}

// ---------------------------------------------------------------------------
// Corpus-frequency bins

/// True when every character is hiragana, katakana, a CJK unified ideograph,
/// the prolonged-sound mark or the kanji iteration mark 々.
pub fn is_japanese_script(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| {
            matches!(c,
                '\u{3040}'..='\u{309F}'   // hiragana
                | '\u{30A0}'..='\u{30FF}' // katakana, includes ー
                | '\u{4E00}'..='\u{9FFF}' // CJK unified ideographs
                | '々')
        })
}

/// Per-level token counts over a level-tagged corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLevelStats {
    /// lemma → count per level, indexed by [`Level::index`].
    pub counts: BTreeMap<String, [u64; 5]>,
    pub level_totals: [u64; 5],
    pub grand_total: u64,
}

impl CorpusLevelStats {
    pub fn count(&self, lemma: &str, level: Level) -> u64 {
        self.counts.get(lemma).map_or(0, |c| c[level.index()])
    }

    pub fn total(&self, level: Level) -> u64 {
        self.level_totals[level.index()]
    }

    /// Records one retained token occurrence.
    pub fn add(&mut self, lemma: &str, level: Level) {
        self.counts.entry(lemma.to_string()).or_default()[level.index()] += 1;
        self.level_totals[level.index()] += 1;
        self.grand_total += 1;
    }

    /// count(w, ℓ) / total(ℓ), zero for an empty level.
    pub fn score(&self, lemma: &str, level: Level) -> f64 {
        let total = self.total(level);
        if total == 0 {
            0.0
        } else {
            self.count(lemma, level) as f64 / total as f64
        }
    }

    /// Share of all tokens across levels.
    pub fn global_frequency(&self, lemma: &str) -> f64 {
        if self.grand_total == 0 {
            return 0.0;
        }
        let n: u64 = self.counts.get(lemma).map_or(0, |c| c.iter().sum());
        n as f64 / self.grand_total as f64
    }

    fn digest(&self) -> String {
        let mut d = PartsDigest::new();
        for (lemma, counts) in &self.counts {
            d.part(lemma);
            for c in counts {
                d.part(c.to_le_bytes());
            }
        }
        d.finish()
    }
}

/// Tokenizes each sentence and counts lemmas written purely in Japanese script.
pub fn accumulate_corpus_stats<I, S>(sentences: I, tokenizer: &dyn Tokenizer) -> Result<CorpusLevelStats, LexiconError>
where
    I: IntoIterator<Item = (S, Level)>,
    S: AsRef<str>,
{
    let mut stats = CorpusLevelStats::default();
    for (text, level) in sentences {
        let utterance = tokenizer.tokenize(text.as_ref())?;
        for token in &utterance.tokens {
            let lemma = normalize(&token.lemma);
            if is_japanese_script(&lemma) {
                stats.add(&lemma, level);
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicThresholds {
    pub global_floor: f64,
    pub level_floor: f64,
    pub assign_threshold: f64,
}

impl Default for HeuristicThresholds {
    fn default() -> Self {
        HeuristicThresholds { global_floor: 1e-6, level_floor: 1e-6, assign_threshold: 1e-6 }
    }
}

/// Frequency-filtered first-level binning.
///
/// A lemma is kept when its global relative frequency exceeds
/// `global_floor` and its within-level frequency exceeds `level_floor` for at
/// least one level; it is binned at the first level, scanning N5 → N1, whose
/// score exceeds `assign_threshold`. A kept lemma with no level above the
/// assignment threshold is dropped.
pub fn derive_heuristic_bins(stats: &CorpusLevelStats, thresholds: HeuristicThresholds) -> LevelLexicon {
    let mut entries = Vec::new();
    for lemma in stats.counts.keys() {
        if stats.global_frequency(lemma) <= thresholds.global_floor {
            continue;
        }
        if !Level::ALL.iter().any(|&l| stats.score(lemma, l) > thresholds.level_floor) {
            continue;
        }
        if let Some(level) = Level::ALL.into_iter().find(|&l| stats.score(lemma, l) > thresholds.assign_threshold) {
            entries.push(LexiconEntry { lemma: lemma.clone(), level, meaning: None });
        }
    }
    LevelLexicon::from_entries(entries, Provenance::CorpusHeuristic, stats.digest())
        .expect("corpus lemmas are normalized Japanese script")
}

/// Reads `n5.txt` … `n1.txt` from `dir`, one sentence per non-empty line.
/// Every level must be present.
pub fn read_level_corpus(dir: &Path) -> Result<Vec<(String, Level)>, LexiconError> {
    let mut out = Vec::new();
    for level in Level::ALL {
        let path = dir.join(format!("{}.txt", level.file_stem()));
        if !path.is_file() {
            return Err(LexiconError::MissingLevel { level, dir: dir.to_path_buf() });
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        out.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| (l.to_string(), level)));
    }
    Ok(out)
}
