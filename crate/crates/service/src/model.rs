//! Session records and the events that build them.

use gradechat_core::control::Method;
use gradechat_core::metrics::TmrBreakdown;
use gradechat_core::tokenizer::{Span, TokenizedUtterance};
use gradechat_core::Level;
use serde::{Deserialize, Serialize};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Immutable facts fixed when the session is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub participant_id: String,
    pub user_level: Level,
    /// The true method, never shown to a blind client.
    pub method: Method,
    /// Obfuscated label (A to D) for blind sessions.
    pub label: Option<String>,
    pub offered_topics: Vec<String>,
    pub consent: bool,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based.
    pub turn_index: usize,
    pub student: String,
    pub tutor: String,
    pub tutor_tokens: TokenizedUtterance,
    /// TMR of the tutor reply against the session level from the lexicon.
    pub estimated_tmr: f64,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: String,
    pub turn_index: usize,
    pub spans: Vec<Span>,
    pub understood_overall: bool,
    pub tmr: TmrBreakdown,
    /// Earlier annotation of the same turn that this one replaces.
    pub supersedes: Option<String>,
    pub created_at: u64,
}

/// Post-conversation questionnaire, each answer on a 1 to 10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyResponse {
    pub understand: u8,
    pub effort: u8,
    pub comfort: u8,
    pub natural: u8,
    pub again: u8,
}

impl SurveyResponse {
    pub fn answers(&self) -> [(&'static str, u8); 5] {
        [
            ("understand", self.understand),
            ("effort", self.effort),
            ("comfort", self.comfort),
            ("natural", self.natural),
            ("again", self.again),
        ]
    }

    /// Name of the first answer outside 1..=10.
    pub fn out_of_range(&self) -> Option<&'static str> {
        self.answers().into_iter().find(|(_, v)| !(1..=10).contains(v)).map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub answers: SurveyResponse,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub record: SessionRecord,
    pub topic: Option<String>,
    pub turns: Vec<TurnRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub survey: Option<SurveyRecord>,
    pub last_activity: u64,
}

impl SessionState {
    pub fn new(record: SessionRecord, topic: Option<String>) -> Self {
        let last_activity = record.created_at;
        SessionState { record, topic, turns: Vec::new(), annotations: Vec::new(), survey: None, last_activity }
    }

    /// Current annotation of `turn_index`, if any.
    pub fn latest_annotation(&self, turn_index: usize) -> Option<&AnnotationRecord> {
        self.annotations.iter().rev().find(|a| a.turn_index == turn_index)
    }

    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::Created { .. } | Event::Snapshot { .. } => {}
            Event::TopicChosen { topic, at } => {
                self.topic = Some(topic.clone());
                self.last_activity = *at;
            }
            Event::Turn { turn } => {
                self.last_activity = turn.created_at;
                self.turns.push(turn.clone());
            }
            Event::Annotation { annotation } => {
                self.last_activity = annotation.created_at;
                self.annotations.push(annotation.clone());
            }
            Event::Survey { survey } => {
                self.last_activity = survey.created_at;
                self.survey = Some(survey.clone());
            }
        }
    }
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session: SessionRecord,
        topic: Option<String>,
    },
    TopicChosen {
        topic: String,
        at: u64,
    },
    Turn {
        turn: TurnRecord,
    },
    Annotation {
        annotation: AnnotationRecord,
    },
    Survey {
        survey: SurveyRecord,
    },
    /// Full state; written as the first line of a compacted log.
    Snapshot {
        state: Box<SessionState>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub v: u32,
    #[serde(flatten)]
    pub event: Event,
}
