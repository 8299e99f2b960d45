//! Tutor/student self-play evaluation.
//!
//! A suite pairs every tutor level with every student level, three topics
//! drawn from the student's level each, for every method. The student opens
//! each dialogue and the tutor is the subject of the evaluation: only tutor
//! turns are scored.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::assets;
use crate::control::{Method, StudentAgent, TutorEngine};
use crate::level::Level;
use crate::lm::sampling::sub_seed;
use crate::lm::{ChatTurn, LanguageModel, Role};
use crate::metrics::{
    average_summaries, score_utterance, summarize, MetricsError, MetricsSummary, Scorers, TmrAggregation, TurnMetrics,
};
use crate::tokenizer::{TokenizedUtterance, Tokenizer};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TURNS: usize = 6;
pub const DEFAULT_DIALOGUES_PER_PAIR: usize = 3;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const DRIFT_CSV: &str = "drift.csv";
pub const TRANSCRIPTS_JSONL: &str = "transcripts.jsonl";

pub const REPORT_COLUMNS: [&str; 7] =
    ["Model", "Avg. Length", "Avg. PPL", "div@3", "Readability", "TMR", "ControlError"];

#[derive(Debug, thiserror::Error)]
pub enum SelfChatError {
    #[error("level {level} has {available} topics but {needed} dialogues per pair were requested")]
    InsufficientTopics { level: Level, needed: usize, available: usize },
    #[error("{0} must be at least 1")]
    Invalid(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("transcript file line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSpec {
    pub method: Method,
    /// The level the tutor is told to speak at; also the TMR and
    /// ControlError target.
    pub tutor_level: Level,
    pub student_level: Level,
    pub topic: String,
    pub turns: usize,
    pub seed: u64,
}

/// Bundled self-chat topics.
pub fn default_topics(level: Level) -> Vec<String> {
    assets::selfchat_topics(level).iter().map(|s| s.to_string()).collect()
}

/// `methods × 5 × 5 × dialogues_per_pair` specs in method, tutor level,
/// student level, topic order. Topic `j` of a pair is the `j`-th entry of the
/// student level's list, and the seed depends only on the (pair, topic) slot
/// so every method sees the same student opening.
pub fn plan_suite(
    methods: &[Method],
    topics: &dyn Fn(Level) -> Vec<String>,
    dialogues_per_pair: usize,
    turns: usize,
    seed: u64,
) -> Result<Vec<DialogueSpec>, SelfChatError> {
    if dialogues_per_pair == 0 {
        return Err(SelfChatError::Invalid("dialogues_per_pair"));
    }
    if turns == 0 {
        return Err(SelfChatError::Invalid("turns"));
    }
    let table: Vec<Vec<String>> = Level::ALL.iter().map(|&l| topics(l)).collect();
    for &level in &Level::ALL {
        let available = table[level.index()].len();
        if available < dialogues_per_pair {
            return Err(SelfChatError::InsufficientTopics { level, needed: dialogues_per_pair, available });
        }
    }
    let mut specs = Vec::with_capacity(methods.len() * 25 * dialogues_per_pair);
    for &method in methods {
        let mut slot = 0u64;
        for &tutor_level in &Level::ALL {
            for &student_level in &Level::ALL {
                for topic in &table[student_level.index()][..dialogues_per_pair] {
                    specs.push(DialogueSpec {
                        method,
                        tutor_level,
                        student_level,
                        topic: topic.clone(),
                        turns,
                        seed: sub_seed(seed, slot),
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: Role,
    pub text: String,
    pub utterance: TokenizedUtterance,
    /// Present on every tutor turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TurnMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogueStatus {
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub schema_version: u32,
    pub spec: DialogueSpec,
    pub turns: Vec<TranscriptTurn>,
    pub status: DialogueStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DialogueTranscript {
    pub fn tutor_metrics(&self) -> impl Iterator<Item = &TurnMetrics> {
        self.turns.iter().filter(|t| t.role == Role::Tutor).filter_map(|t| t.metrics.as_ref())
    }
}

/// Everything a dialogue needs besides its spec.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub tutor: &'a TutorEngine,
    pub student_lm: &'a std::sync::Arc<dyn LanguageModel>,
    pub tokenizer: &'a dyn Tokenizer,
    pub scorers: Scorers<'a>,
}

fn check_scorers(scorers: &Scorers<'_>) -> Result<(), SelfChatError> {
    if scorers.predictor.is_none() {
        return Err(MetricsError::MissingScorer { metric: "ControlError", dependency: "difficulty predictor" }.into());
    }
    if scorers.lm.is_none() {
        return Err(MetricsError::MissingScorer { metric: "PPL", dependency: "perplexity language model" }.into());
    }
    Ok(())
}

/// Runs one dialogue. A failing agent aborts the dialogue with the turns so
/// far kept; only a missing scorer is an error.
pub fn run_dialogue(spec: &DialogueSpec, agents: &Agents<'_>) -> Result<DialogueTranscript, SelfChatError> {
    check_scorers(&agents.scorers)?;
    let student = StudentAgent::new(agents.student_lm.clone(), spec.student_level, spec.topic.clone());
    let mut history: Vec<ChatTurn> = Vec::new();
    let mut turns = Vec::with_capacity(spec.turns * 2);
    let mut error = None;

    for i in 0..spec.turns as u64 {
        let student_text = match student.respond(&history, sub_seed(spec.seed, 2 * i)) {
            Ok(t) => t,
            Err(e) => {
                error = Some(format!("student turn {}: {e}", i + 1));
                break;
            }
        };
        let utterance = match agents.tokenizer.tokenize(&student_text) {
            Ok(u) => u,
            Err(e) => {
                error = Some(format!("student turn {}: {e}", i + 1));
                break;
            }
        };
        history.push(ChatTurn { role: Role::Student, text: student_text.clone() });
        turns.push(TranscriptTurn { role: Role::Student, text: student_text, utterance, metrics: None });

        let reply = agents
            .tutor
            .respond(spec.method, spec.tutor_level, &history, sub_seed(spec.seed, 2 * i + 1))
            .map_err(|e| e.to_string())
            .and_then(|r| agents.tokenizer.tokenize(&r.text).map(|u| (r.text, u)).map_err(|e| e.to_string()));
        let (text, utterance) = match reply {
            Ok(x) => x,
            Err(e) => {
                error = Some(format!("tutor turn {}: {e}", i + 1));
                break;
            }
        };
        let metrics = score_utterance(&utterance, spec.tutor_level, spec.tutor_level, &agents.scorers)?;
        history.push(ChatTurn { role: Role::Tutor, text: text.clone() });
        turns.push(TranscriptTurn { role: Role::Tutor, text, utterance, metrics: Some(metrics) });
    }

    Ok(DialogueTranscript {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        turns,
        status: if error.is_some() { DialogueStatus::Aborted } else { DialogueStatus::Complete },
        error,
    })
}

/// Runs `specs` on up to `jobs` worker threads. Results come back in spec
/// order whatever the completion order.
pub fn run_suite(
    specs: &[DialogueSpec],
    agents: &Agents<'_>,
    jobs: usize,
) -> Result<Vec<DialogueTranscript>, SelfChatError> {
    check_scorers(&agents.scorers)?;
    let jobs = jobs.clamp(1, specs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DialogueTranscript, SelfChatError>>>> =
        Mutex::new((0..specs.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let r = run_dialogue(spec, agents);
                results.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("result slots poisoned").into_iter().map(|r| r.expect("every spec is run")).collect()
}

/// Summary over the tutor turns of one transcript.
pub fn score_transcript(
    transcript: &DialogueTranscript,
    mode: TmrAggregation,
) -> Result<MetricsSummary, SelfChatError> {
    let tutor: Vec<TurnMetrics> = transcript.tutor_metrics().cloned().collect();
    Ok(summarize(&tutor, mode)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub complete: usize,
    pub aborted: usize,
    /// `None` when the method has no complete transcript.
    pub summary: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub method: Method,
    /// 1-based tutor turn index.
    pub turn_index: usize,
    pub mean_tmr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub tmr_aggregation: TmrAggregation,
    pub readability_scorer: Option<String>,
    pub rows: Vec<MethodRow>,
    pub drift: Vec<DriftPoint>,
}

/// Per-method means of per-transcript summaries over complete transcripts,
/// plus the per-turn TMR series. Aborted transcripts are only counted.
pub fn aggregate_suite(
    transcripts: &[DialogueTranscript],
    mode: TmrAggregation,
    readability_scorer: Option<&str>,
) -> Result<SuiteReport, SelfChatError> {
    let mut by_method: BTreeMap<Method, Vec<&DialogueTranscript>> = BTreeMap::new();
    for t in transcripts {
        by_method.entry(t.spec.method).or_default().push(t);
    }
    let mut rows = Vec::new();
    let mut drift = Vec::new();
    for (method, items) in by_method {
        let complete: Vec<&DialogueTranscript> =
            items.iter().copied().filter(|t| t.status == DialogueStatus::Complete).collect();
        let summaries = complete.iter().map(|t| score_transcript(t, mode)).collect::<Result<Vec<_>, _>>()?;
        let summary = if summaries.is_empty() { None } else { Some(average_summaries(&summaries)?) };
        rows.push(MethodRow { method, complete: complete.len(), aborted: items.len() - complete.len(), summary });

        let mut series: Vec<(f64, usize)> = Vec::new();
        for t in &complete {
            for (i, m) in t.tutor_metrics().enumerate() {
                if series.len() <= i {
                    series.push((0.0, 0));
                }
                series[i].0 += m.tmr;
                series[i].1 += 1;
            }
        }
        drift.extend(series.into_iter().enumerate().map(|(i, (sum, n))| DriftPoint {
            method,
            turn_index: i + 1,
            mean_tmr: sum / n as f64,
            n,
        }));
    }
    Ok(SuiteReport {
        schema_version: SCHEMA_VERSION,
        tmr_aggregation: mode,
        readability_scorer: readability_scorer.map(str::to_string),
        rows,
        drift,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

impl SuiteReport {
    /// The report table with TMR as a percentage. Absent values are `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            let s = row.summary.as_ref();
            let fields = [
                row.method.to_string(),
                cell(s.map(|s| s.avg_length)),
                cell(s.and_then(|s| s.avg_ppl)),
                cell(s.map(|s| s.div3)),
                cell(s.and_then(|s| s.readability)),
                cell(s.map(|s| s.tmr * 100.0)),
                cell(s.and_then(|s| s.control_error)),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn drift_csv(&self) -> String {
        let mut out = String::from("method,turn_index,mean_tmr,n\n");
        for p in &self.drift {
            out.push_str(&format!("{},{},{:.6},{}\n", p.method, p.turn_index, p.mean_tmr, p.n));
        }
        out
    }

    /// Writes the JSON report, the table CSV and the drift CSV into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SelfChatError> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join(REPORT_JSON), json)?;
        std::fs::write(dir.join(REPORT_CSV), self.to_csv())?;
        std::fs::write(dir.join(DRIFT_CSV), self.drift_csv())?;
        Ok(())
    }
}

/// Appends one JSON line per transcript and syncs the file.
pub fn append_transcripts(path: &Path, transcripts: &[DialogueTranscript]) -> Result<(), SelfChatError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for t in transcripts {
        serde_json::to_writer(&mut buf, t)?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_all()?;
    Ok(())
}

pub fn read_transcripts(path: &Path) -> Result<Vec<DialogueTranscript>, SelfChatError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| SelfChatError::Schema { line: i + 1, message: e.to_string() })?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(SelfChatError::Schema {
                line: i + 1,
                message: format!("unsupported schema_version {version:?}, expected {SCHEMA_VERSION}"),
            });
        }
        out.push(
            serde_json::from_value(value).map_err(|e| SelfChatError::Schema { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_has_75_per_method() {
        let specs = plan_suite(&[Method::Fudge], &default_topics, 3, 6, 0).unwrap();
        assert_eq!(specs.len(), 75);
        let one = plan_suite(&Method::ALL, &default_topics, 1, 6, 0).unwrap();
        assert_eq!(one.len(), 100);
    }

    #[test]
    fn slots_share_seeds_across_methods() {
        let specs = plan_suite(&[Method::Baseline, Method::Fudge], &default_topics, 3, 6, 9).unwrap();
        let (a, b) = specs.split_at(75);
        for (x, y) in a.iter().zip(b) {
            assert_eq!((x.seed, &x.topic, x.tutor_level), (y.seed, &y.topic, y.tutor_level));
        }
    }

    #[test]
    fn too_few_topics_is_an_error() {
        let err = plan_suite(&[Method::Baseline], &default_topics, 4, 6, 0).unwrap_err();
        assert!(matches!(err, SelfChatError::InsufficientTopics { needed: 4, available: 3, .. }));
        assert!(plan_suite(&[Method::Baseline], &default_topics, 1, 0, 0).is_err());
    }
}
