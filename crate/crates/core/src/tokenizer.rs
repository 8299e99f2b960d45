//! Lemmatizing tokenizers.
//!
//! Every metric consumes a [`TokenizedUtterance`]: the content tokens of an
//! utterance with their dictionary forms and character spans. Punctuation,
//! symbols, separators and control characters are dropped but their spans are
//! kept so the source can always be reconstructed.
//!
//! Two backends ship here:
//!
//! - [`DictionaryTokenizer`]: greedy longest match over a surface-form table,
//!   deterministic and dependency-free. Runs that match nothing become single
//!   tokens whose lemma is the surface.
//! - [`CommandTokenizer`]: adapter around an external morphological analyzer
//!   process that reads one line of text and prints a JSON token array.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::lexicon::LevelLexicon;

/// Half-open character range `[start, end)` into the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when the two ranges share at least one character.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub span: Span,
    pub is_content: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedUtterance {
    pub source: String,
    /// Content tokens only, in source order.
    pub tokens: Vec<Token>,
    /// Spans removed as punctuation or whitespace.
    #[serde(default)]
    pub dropped: Vec<Span>,
}

impl TokenizedUtterance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lemmas(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.lemma.as_str()).collect()
    }

    /// Length of the source in characters.
    pub fn char_len(&self) -> usize {
        self.source.chars().count()
    }

    /// Utterance built from already-segmented lemmas joined without
    /// separators; used for model output whose tokens are lemmas.
    pub fn from_lemmas<S: AsRef<str>>(lemmas: &[S]) -> Self {
        let mut source = String::new();
        let mut tokens = Vec::with_capacity(lemmas.len());
        let mut pos = 0;
        for lemma in lemmas {
            let lemma = lemma.as_ref();
            let n = lemma.chars().count();
            source.push_str(lemma);
            if n > 0 {
                tokens.push(Token {
                    surface: lemma.to_string(),
                    lemma: lemma.to_string(),
                    span: Span::new(pos, pos + n),
                    is_content: true,
                });
            }
            pos += n;
        }
        TokenizedUtterance { source, tokens, dropped: Vec::new() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("tokenizer backend {backend:?} failed: {message}")]
    Backend { backend: String, message: String },
    #[error("tokenizer backend {0:?} is already registered")]
    DuplicateBackend(String),
    #[error("unknown tokenizer backend {0:?} (expected `builtin` or `external:<name>`)")]
    UnknownBackend(String),
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<TokenizedUtterance, TokenizeError>;
}

impl<T: Tokenizer + ?Sized> Tokenizer for Arc<T> {
    fn tokenize(&self, text: &str) -> Result<TokenizedUtterance, TokenizeError> {
        (**self).tokenize(text)
    }
}

fn punctuation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\p{P}\p{S}\p{Z}\p{Cc}]$").expect("static regex"))
}

/// Punctuation, symbol, separator or control character.
pub fn is_punctuation(c: char) -> bool {
    let mut buf = [0u8; 4];
    punctuation_regex().is_match(c.encode_utf8(&mut buf))
}

fn push_dropped(dropped: &mut Vec<Span>, start: usize, end: usize) {
    if let Some(last) = dropped.last_mut() {
        if last.end == start {
            last.end = end;
            return;
        }
    }
    dropped.push(Span::new(start, end));
}

/// Conjugation class used to derive polite (ます) stems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerbClass {
    Ichidan,
    Godan,
    /// する and noun + する compounds.
    Suru,
    /// 来る / くる.
    Kuru,
}

/// Polite auxiliary forms folded to the dictionary form ます.
const POLITE_FORMS: &[&str] = &["ます", "ました", "ましょう", "ません", "ませんでした", "ましょ"];

fn godan_i_row(c: char) -> Option<char> {
    Some(match c {
        'う' => 'い',
        'く' => 'き',
        'ぐ' => 'ぎ',
        'す' => 'し',
        'つ' => 'ち',
        'ぬ' => 'に',
        'ぶ' => 'び',
        'む' => 'み',
        'る' => 'り',
        _ => return None,
    })
}

/// The ます-stem of a dictionary-form verb.
pub fn masu_stem(lemma: &str, class: VerbClass) -> Option<String> {
    let mut chars: Vec<char> = lemma.chars().collect();
    match class {
        VerbClass::Ichidan => {
            if chars.pop()? != 'る' || chars.is_empty() {
                return None;
            }
        }
        VerbClass::Godan => {
            let last = chars.pop()?;
            chars.push(godan_i_row(last)?);
        }
        VerbClass::Suru => {
            let s: String = chars.iter().collect();
            let base = s.strip_suffix("する")?;
            return Some(format!("{base}し"));
        }
        VerbClass::Kuru => {
            let s: String = chars.iter().collect();
            return match s.as_str() {
                "来る" => Some("来".to_string()),
                "くる" => Some("き".to_string()),
                _ => None,
            };
        }
    }
    Some(chars.into_iter().collect())
}

/// Greedy longest-match tokenizer over a surface → lemma table.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTokenizer {
    forms: HashMap<String, String>,
    max_chars: usize,
}

impl DictionaryTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dictionary of every lemma in `lexicon` plus the polite auxiliary table.
    pub fn from_lexicon(lexicon: &LevelLexicon) -> Self {
        let mut tok = Self::new();
        for lemma in lexicon.lemmas() {
            tok.add_word(lemma);
        }
        tok.add_polite_auxiliary();
        tok
    }

    /// Adds a word whose surface equals its lemma.
    pub fn add_word(&mut self, lemma: &str) -> &mut Self {
        self.add_form(lemma, lemma)
    }

    pub fn add_form(&mut self, surface: &str, lemma: &str) -> &mut Self {
        if surface.is_empty() || lemma.is_empty() {
            return self;
        }
        let lemma: String = lemma.nfkc().collect();
        self.max_chars = self.max_chars.max(surface.chars().count());
        self.forms.entry(surface.to_string()).or_insert(lemma);
        self
    }

    /// ます, ました, ましょう, ... → ます.
    pub fn add_polite_auxiliary(&mut self) -> &mut Self {
        for form in POLITE_FORMS {
            self.add_form(form, "ます");
        }
        self
    }

    /// Adds the verb and its ます-stem, both mapping to the dictionary form.
    pub fn add_verb(&mut self, lemma: &str, class: VerbClass) -> &mut Self {
        self.add_word(lemma);
        if let Some(stem) = masu_stem(lemma, class) {
            self.add_form(&stem, lemma);
        }
        if class == VerbClass::Suru && lemma != "する" {
            self.add_form("し", "する");
            self.add_word("する");
        }
        self
    }

    pub fn with_word(mut self, lemma: &str) -> Self {
        self.add_word(lemma);
        self
    }

    pub fn with_form(mut self, surface: &str, lemma: &str) -> Self {
        self.add_form(surface, lemma);
        self
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Longest dictionary surface starting at `chars[i]`, as (length, lemma).
    fn longest_match(&self, chars: &[char], i: usize) -> Option<(usize, &str)> {
        let limit = self.max_chars.min(chars.len() - i);
        let mut candidate = String::new();
        let mut best = None;
        for (len, &c) in chars[i..i + limit].iter().enumerate() {
            if is_punctuation(c) {
                break;
            }
            candidate.push(c);
            if let Some(lemma) = self.forms.get(&candidate) {
                best = Some((len + 1, lemma.as_str()));
            }
        }
        best
    }
}

impl Tokenizer for DictionaryTokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenizedUtterance, TokenizeError> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut dropped = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if is_punctuation(chars[i]) {
                push_dropped(&mut dropped, i, i + 1);
                i += 1;
                continue;
            }
            let (len, lemma) = match self.longest_match(&chars, i) {
                Some((len, lemma)) => (len, lemma.to_string()),
                None => {
                    // Out-of-dictionary run: up to the next punctuation or the
                    // next position where some dictionary entry matches.
                    let mut j = i + 1;
                    while j < chars.len() && !is_punctuation(chars[j]) && self.longest_match(&chars, j).is_none() {
                        j += 1;
                    }
                    let surface: String = chars[i..j].iter().collect();
                    (j - i, surface)
                }
            };
            tokens.push(Token {
                surface: chars[i..i + len].iter().collect(),
                lemma,
                span: Span::new(i, i + len),
                is_content: true,
            });
            i += len;
        }
        Ok(TokenizedUtterance { source: text.to_string(), tokens, dropped })
    }
}

/// One element of the adapter's JSON output. Offsets are character indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterToken {
    pub surface: String,
    pub lemma: String,
    pub start: usize,
    pub end: usize,
    pub pos: String,
}

/// POS tags treated as non-content (Sudachi/UniDic and UD conventions).
fn is_non_content_pos(pos: &str) -> bool {
    let head = pos.split([',', '-']).next().unwrap_or("");
    matches!(head, "補助記号" | "空白" | "記号" | "PUNCT" | "punct" | "SYM")
}

/// Converts adapter output into an utterance, validating every span.
pub fn utterance_from_adapter(
    backend: &str,
    source: &str,
    raw: Vec<AdapterToken>,
) -> Result<TokenizedUtterance, TokenizeError> {
    let chars: Vec<char> = source.chars().collect();
    let fail = |message: String| TokenizeError::Backend { backend: backend.to_string(), message };
    let mut tokens = Vec::new();
    let mut dropped = Vec::new();
    let mut cursor = 0;
    for t in raw {
        if t.start >= t.end || t.end > chars.len() || t.start < cursor {
            return Err(fail(format!(
                "invalid span [{}, {}) for {:?} (cursor {cursor}, length {})",
                t.start,
                t.end,
                t.surface,
                chars.len()
            )));
        }
        let surface: String = chars[t.start..t.end].iter().collect();
        if surface != t.surface {
            return Err(fail(format!("surface {:?} does not match source slice {surface:?}", t.surface)));
        }
        if cursor < t.start {
            push_dropped(&mut dropped, cursor, t.start);
        }
        let punct = is_non_content_pos(&t.pos) || surface.chars().all(is_punctuation);
        if punct {
            push_dropped(&mut dropped, t.start, t.end);
        } else {
            let lemma = if t.lemma.is_empty() { surface.clone() } else { t.lemma };
            tokens.push(Token { surface, lemma, span: Span::new(t.start, t.end), is_content: true });
        }
        cursor = t.end;
    }
    if cursor < chars.len() {
        push_dropped(&mut dropped, cursor, chars.len());
    }
    Ok(TokenizedUtterance { source: source.to_string(), tokens, dropped })
}

/// External analyzer invoked as a subprocess: one line of text on stdin,
/// a JSON array of [`AdapterToken`] on stdout.
#[derive(Debug, Clone)]
pub struct CommandTokenizer {
    name: String,
    program: PathBuf,
    args: Vec<String>,
}

impl CommandTokenizer {
    pub fn new(name: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        CommandTokenizer { name: name.into(), program: program.into(), args }
    }
}

impl Tokenizer for CommandTokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenizedUtterance, TokenizeError> {
        let fail = |message: String| TokenizeError::Backend { backend: self.name.clone(), message };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program.display())))?;
        // Newlines become spaces so the adapter sees exactly one line with
        // unchanged character offsets.
        let line: String = text.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
        {
            let mut stdin = child.stdin.take().ok_or_else(|| fail("no stdin".into()))?;
            stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| fail(format!("write failed: {e}")))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(format!("wait failed: {e}")))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim())));
        }
        let raw: Vec<AdapterToken> =
            serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("malformed JSON output: {e}")))?;
        utterance_from_adapter(&self.name, &line, raw).map(|mut u| {
            u.source = text.to_string();
            u
        })
    }
}

/// Named tokenizer backends, selectable by the `tokenizer.backend` setting.
#[derive(Default, Clone)]
pub struct TokenizerRegistry {
    backends: BTreeMap<String, Arc<dyn Tokenizer>>,
}

impl TokenizerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, backend: Arc<dyn Tokenizer>) -> Result<(), TokenizeError> {
        let name = name.into();
        if self.backends.contains_key(&name) {
            return Err(TokenizeError::DuplicateBackend(name));
        }
        self.backends.insert(name, backend);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Tokenizer>> {
        self.backends.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    /// Resolves a `tokenizer.backend` value: `builtin` or `external:<name>`.
    pub fn select(&self, setting: &str) -> Result<Arc<dyn Tokenizer>, TokenizeError> {
        let key = match setting {
            "builtin" => "builtin",
            s => s
                .strip_prefix("external:")
                .filter(|n| !n.is_empty() && *n != "builtin")
                .ok_or_else(|| TokenizeError::UnknownBackend(setting.to_string()))?,
        };
        self.get(key).ok_or_else(|| TokenizeError::UnknownBackend(setting.to_string()))
    }
}
