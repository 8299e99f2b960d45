//! De-identified study dataset.

use std::collections::HashMap;

use gradechat_core::control::Method;
use gradechat_core::metrics::TmrBreakdown;
use gradechat_core::tokenizer::Span;
use gradechat_core::Level;
use serde::{Deserialize, Serialize};

use crate::model::{SessionState, SurveyResponse};

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub level: Option<Level>,
    pub method: Option<Method>,
    /// Only sessions that reached the turn limit.
    #[serde(default)]
    pub complete_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedAnnotation {
    pub annotation_id: String,
    pub spans: Vec<Span>,
    pub understood_overall: bool,
    pub tmr: TmrBreakdown,
    pub supersedes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedTurn {
    pub turn_index: usize,
    pub student: String,
    pub tutor: String,
    pub estimated_tmr: f64,
    /// The current annotation, if the turn was annotated.
    pub annotation: Option<ExportedAnnotation>,
    /// Every annotation of the turn in submission order.
    pub annotation_history: Vec<ExportedAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedSession {
    pub session_id: String,
    /// Pseudonym (P1, P2, ...) in order of first session.
    pub participant: String,
    pub level: Level,
    pub method: Method,
    pub label: Option<String>,
    pub topic: Option<String>,
    pub complete: bool,
    pub turns: Vec<ExportedTurn>,
    pub survey: Option<SurveyResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyExport {
    pub schema_version: u32,
    pub sessions: Vec<ExportedSession>,
}

/// Builds the export from session states. Ordering is by creation time then
/// session id; pseudonyms are assigned over all sessions before filtering so
/// that they do not depend on the filter.
pub fn build_export(mut states: Vec<SessionState>, turn_limit: usize, filter: &ExportFilter) -> StudyExport {
    states
        .sort_by(|a, b| (a.record.created_at, &a.record.session_id).cmp(&(b.record.created_at, &b.record.session_id)));
    let mut pseudonyms: HashMap<String, String> = HashMap::new();
    for s in &states {
        let next = pseudonyms.len() + 1;
        pseudonyms.entry(s.record.participant_id.clone()).or_insert_with(|| format!("P{next}"));
    }
    let sessions = states
        .iter()
        .filter(|s| filter.level.is_none_or(|l| l == s.record.user_level))
        .filter(|s| filter.method.is_none_or(|m| m == s.record.method))
        .filter(|s| !filter.complete_only || s.turns.len() >= turn_limit)
        .map(|s| {
            let export_ann = |a: &crate::model::AnnotationRecord| ExportedAnnotation {
                annotation_id: a.annotation_id.clone(),
                spans: a.spans.clone(),
                understood_overall: a.understood_overall,
                tmr: a.tmr.clone(),
                supersedes: a.supersedes.clone(),
            };
            ExportedSession {
                session_id: s.record.session_id.clone(),
                participant: pseudonyms[&s.record.participant_id].clone(),
                level: s.record.user_level,
                method: s.record.method,
                label: s.record.label.clone(),
                topic: s.topic.clone(),
                complete: s.turns.len() >= turn_limit,
                turns: s
                    .turns
                    .iter()
                    .map(|t| ExportedTurn {
                        turn_index: t.turn_index,
                        student: t.student.clone(),
                        tutor: t.tutor.clone(),
                        estimated_tmr: t.estimated_tmr,
                        annotation: s.latest_annotation(t.turn_index).map(export_ann),
                        annotation_history: s
                            .annotations
                            .iter()
                            .filter(|a| a.turn_index == t.turn_index)
                            .map(export_ann)
                            .collect(),
                    })
                    .collect(),
                survey: s.survey.as_ref().map(|r| r.answers),
            }
        })
        .collect();
    StudyExport { schema_version: EXPORT_SCHEMA_VERSION, sessions }
}
