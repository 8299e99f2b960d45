use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use gradechat_core::control::{EngineSettings, Method, TutorEngine};
use gradechat_core::lm::{ChatContext, LanguageModel, LmError, NextTokenDistribution, NgramLm, Role};
use gradechat_core::metrics::{ScoreMode, Scorers, SurrogateReadability, TmrAggregation, TurnMetrics};
use gradechat_core::selfchat::*;
use gradechat_core::tokenizer::TokenizedUtterance;
use gradechat_core::{synthetic, Level};

/// Delegates to the toy LM but fails every completion after the first `ok`.
struct FailAfter {
    inner: NgramLm,
    ok: usize,
    calls: AtomicUsize,
}

impl LanguageModel for FailAfter {
    fn name(&self) -> &str {
        "fail-after"
    }
    fn supports_distributions(&self) -> bool {
        true
    }
    fn next_distribution(
        &self,
        ctx: &ChatContext,
        prefix: &[String],
        k: usize,
    ) -> Result<NextTokenDistribution, LmError> {
        self.inner.next_distribution(ctx, prefix, k)
    }
    fn complete(&self, ctx: &ChatContext) -> Result<String, LmError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok {
            return Err(LmError::Model("provider went away".into()));
        }
        self.inner.complete(ctx)
    }
    fn joiner(&self) -> &str {
        " "
    }
}

struct Fixture {
    engine: TutorEngine,
    student: Arc<dyn LanguageModel>,
    ppl_lm: NgramLm,
    tokenizer: gradechat_core::tokenizer::DictionaryTokenizer,
    readability: SurrogateReadability,
}

fn fixture(tutor_lm: Arc<dyn LanguageModel>) -> Fixture {
    let (predictor, _) = synthetic::toy_predictor(1);
    let lexicon = Arc::new(synthetic::lexicon());
    Fixture {
        engine: TutorEngine {
            lm: tutor_lm,
            predictor: Some(Arc::new(predictor)),
            lexicon,
            tokenizer: Arc::new(synthetic::tokenizer()),
            settings: EngineSettings::default(),
        },
        student: Arc::new(synthetic::toy_lm(2)),
        ppl_lm: synthetic::toy_lm(3),
        tokenizer: synthetic::tokenizer(),
        readability: SurrogateReadability::default(),
    }
}

impl Fixture {
    fn agents(&self) -> Agents<'_> {
        Agents {
            tutor: &self.engine,
            student_lm: &self.student,
            tokenizer: &self.tokenizer,
            scorers: Scorers {
                lexicon: &self.engine.lexicon,
                predictor: self.engine.predictor.as_deref(),
                lm: Some(&self.ppl_lm),
                readability: Some(&self.readability),
                score_mode: ScoreMode::Expected,
            },
        }
    }
}

fn spec(method: Method, turns: usize) -> DialogueSpec {
    DialogueSpec {
        method,
        tutor_level: Level::N5,
        student_level: Level::N4,
        topic: default_topics(Level::N4)[0].clone(),
        turns,
        seed: 11,
    }
}

#[test]
fn single_turn_dialogue_has_one_exchange() {
    let f = fixture(Arc::new(synthetic::toy_lm(0)));
    let t = run_dialogue(&spec(Method::Baseline, 1), &f.agents()).unwrap();
    assert_eq!(t.status, DialogueStatus::Complete);
    let roles: Vec<Role> = t.turns.iter().map(|t| t.role).collect();
    assert_eq!(roles, [Role::Student, Role::Tutor]);
    assert!(t.turns[1].metrics.is_some());
    assert!(t.turns[0].metrics.is_none());
}

#[test]
fn seeded_dialogues_repeat_and_alternate() {
    let f = fixture(Arc::new(synthetic::toy_lm(0)));
    for m in Method::ALL {
        let a = run_dialogue(&spec(m, 6), &f.agents()).unwrap();
        let b = run_dialogue(&spec(m, 6), &f.agents()).unwrap();
        assert_eq!(a, b, "{m}");
        assert_eq!(a.turns.len(), 12, "{m}: {:?}", a.error);
        assert!(a.turns.windows(2).all(|w| w[0].role != w[1].role));
        assert_eq!(a.turns[0].role, Role::Student);
    }
}

#[test]
fn failing_tutor_aborts_with_turns_kept() {
    let lm = FailAfter { inner: synthetic::toy_lm(0), ok: 3, calls: AtomicUsize::new(0) };
    let f = fixture(Arc::new(lm));
    let t = run_dialogue(&spec(Method::Baseline, 6), &f.agents()).unwrap();
    assert_eq!(t.status, DialogueStatus::Aborted);
    assert_eq!(t.tutor_metrics().count(), 3);
    assert!(t.error.as_deref().unwrap().contains("tutor turn 4"));
}

#[test]
fn missing_scorer_is_named() {
    let f = fixture(Arc::new(synthetic::toy_lm(0)));
    let mut agents = f.agents();
    agents.scorers.lm = None;
    let err = run_dialogue(&spec(Method::Baseline, 1), &agents).unwrap_err();
    assert!(err.to_string().contains("PPL"), "{err}");
}

fn turn(role: Role, tmr: f64, length: usize, ppl: Option<f64>, ce: f64) -> TranscriptTurn {
    TranscriptTurn {
        role,
        text: String::new(),
        utterance: TokenizedUtterance::from_lemmas(&["x"]),
        metrics: (role == Role::Tutor).then_some(TurnMetrics {
            length,
            total_tokens: length,
            cnt_above: 0,
            cnt_unbinned: 0,
            tmr,
            ppl,
            ppl_infinite: ppl.is_none(),
            div3: 1.0,
            readability: None,
            jlpt_score: Some(1.0),
            control_error: Some(ce),
        }),
    }
}

fn transcript(method: Method, status: DialogueStatus, tutor: &[(f64, usize, Option<f64>, f64)]) -> DialogueTranscript {
    let mut turns = Vec::new();
    for &(tmr, len, ppl, ce) in tutor {
        turns.push(turn(Role::Student, 0.0, 0, None, 0.0));
        turns.push(turn(Role::Tutor, tmr, len, ppl, ce));
    }
    DialogueTranscript { schema_version: SCHEMA_VERSION, spec: spec(method, tutor.len()), turns, status, error: None }
}

#[test]
fn transcript_scores_over_tutor_turns() {
    let t =
        transcript(Method::Baseline, DialogueStatus::Complete, &[(0.1, 4, Some(10.0), 0.0), (0.3, 6, Some(20.0), 1.0)]);
    let s = score_transcript(&t, TmrAggregation::Macro).unwrap();
    assert!((s.tmr - 0.2).abs() < 1e-12);
    assert_eq!(s.utterances, 2);
    assert_eq!(s.avg_length, 5.0);
    let single = transcript(Method::Baseline, DialogueStatus::Complete, &[(0.4, 3, Some(7.0), 0.25)]);
    let s = score_transcript(&single, TmrAggregation::Macro).unwrap();
    assert_eq!((s.tmr, s.avg_length, s.avg_ppl, s.control_error), (0.4, 3.0, Some(7.0), Some(0.25)));
}

#[test]
fn four_transcript_fixture_matches_hand_aggregation() {
    use DialogueStatus::*;
    let ts = [
        transcript(Method::Baseline, Complete, &[(0.1, 4, Some(10.0), 0.0), (0.3, 6, Some(20.0), 1.0)]),
        transcript(Method::Baseline, Complete, &[(0.3, 2, None, 4.0), (0.5, 2, Some(30.0), 0.0)]),
        transcript(Method::Baseline, Aborted, &[(0.9, 9, Some(99.0), 9.0)]),
        transcript(Method::Fudge, Aborted, &[(0.0, 1, Some(1.0), 0.0)]),
    ];
    let r = aggregate_suite(&ts, TmrAggregation::Macro, None).unwrap();
    // Baseline per transcript: tmr 0.2 and 0.4, length 5 and 2,
    // ppl 15 and 30 (infinite turn dropped), CE 0.5 and 2.0.
    let b = &r.rows[0];
    assert_eq!((b.method, b.complete, b.aborted), (Method::Baseline, 2, 1));
    let s = b.summary.as_ref().unwrap();
    assert!((s.tmr - 0.3).abs() < 1e-9);
    assert!((s.avg_length - 3.5).abs() < 1e-9);
    assert!((s.avg_ppl.unwrap() - 22.5).abs() < 1e-9);
    assert!((s.control_error.unwrap() - 1.25).abs() < 1e-9);
    assert_eq!(s.ppl_infinite, 1);

    let f = &r.rows[1];
    assert_eq!((f.method, f.complete, f.aborted, f.summary.is_none()), (Method::Fudge, 0, 1, true));

    // Drift: turn 1 mean of 0.1 and 0.3, turn 2 mean of 0.3 and 0.5.
    assert_eq!(r.drift.len(), 2);
    assert!((r.drift[0].mean_tmr - 0.2).abs() < 1e-12);
    assert!((r.drift[1].mean_tmr - 0.4).abs() < 1e-12);
    assert_eq!(r.drift[0].n, 2);

    let csv = r.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "Model,Avg. Length,Avg. PPL,div@3,Readability,TMR,ControlError");
    assert_eq!(csv.lines().nth(1).unwrap(), "baseline,3.5000,22.5000,1.0000,NA,30.0000,1.2500");
    assert!(csv.lines().nth(2).unwrap().starts_with("fudge,NA"));
    assert!(r.drift_csv().starts_with("method,turn_index,mean_tmr,n\nbaseline,1,0.200000,2\n"));
}

#[test]
fn suite_rerun_is_byte_identical_and_round_trips() {
    let f = fixture(Arc::new(synthetic::toy_lm(0)));
    let specs = plan_suite(&[Method::Baseline, Method::Fudge], &default_topics, 1, 2, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, jobs) in [(0, 1), (1, 4)] {
        let out = dir.path().join(format!("run{run}"));
        std::fs::create_dir_all(&out).unwrap();
        let ts = run_suite(&specs, &f.agents(), jobs).unwrap();
        append_transcripts(&out.join(TRANSCRIPTS_JSONL), &ts).unwrap();
        assert_eq!(read_transcripts(&out.join(TRANSCRIPTS_JSONL)).unwrap(), ts);
        aggregate_suite(&ts, TmrAggregation::Macro, Some("surrogate")).unwrap().write(&out).unwrap();
        outputs
            .push([TRANSCRIPTS_JSONL, REPORT_JSON, REPORT_CSV, DRIFT_CSV].map(|n| std::fs::read(out.join(n)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.jsonl");
    std::fs::write(&p, "{\"schema_version\":99}\n").unwrap();
    let err = read_transcripts(&p).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}
