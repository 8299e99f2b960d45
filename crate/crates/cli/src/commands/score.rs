use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use gradechat_core::control::Method;
use gradechat_core::metrics::{
    control_error, ReadabilityScorer, ScoreMode, SurrogateReadability, SURROGATE_READABILITY_NAME,
};
use gradechat_service::export::{StudyExport, EXPORT_SCHEMA_VERSION};
use serde::Serialize;
use serde_json::json;

use super::{to_pretty_json, write_file};
use crate::failure::{fail, Exit};
use crate::manifest::RunManifest;
use crate::{resources, Common};

pub const HUMAN_EVAL_JSON: &str = "human_eval.json";
pub const HUMAN_EVAL_CSV: &str = "human_eval.csv";
pub const HUMAN_EVAL_COLUMNS: [&str; 12] = [
    "Model",
    "%Rounds Not Understood",
    "TMR",
    "Readability",
    "ControlError",
    "Understood?",
    "Effortful?",
    "Natural?",
    "Comfort?",
    "Chat Again?",
    "Sessions",
    "Rounds",
];

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    /// Study export (GET /export) as JSON.
    #[arg(long)]
    pub export: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SurveyMeans {
    pub understand: Option<f64>,
    pub effort: Option<f64>,
    pub natural: Option<f64>,
    pub comfort: Option<f64>,
    pub again: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScores {
    pub method: Method,
    pub sessions: usize,
    /// Annotated tutor turns.
    pub rounds: usize,
    pub pct_not_understood: Option<f64>,
    /// Mean annotated TMR as a percentage.
    pub tmr: Option<f64>,
    /// Mean over all tutor turns.
    pub readability: Option<f64>,
    pub control_error: Option<f64>,
    pub surveys: usize,
    pub survey: SurveyMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanEval {
    pub schema_version: u32,
    pub readability_scorer: String,
    pub rows: Vec<MethodScores>,
    /// Rank correlation between a round's annotated TMR and it being marked
    /// not understood, over all annotated rounds.
    pub tmr_not_understood_spearman: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// 1-based ranks with ties given their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho as the Pearson correlation of tie-averaged ranks. `None`
/// with fewer than two points or when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx)?, mean(&ry)?);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "NA".into())
}

impl HumanEval {
    pub fn to_csv(&self) -> String {
        let mut out = HUMAN_EVAL_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.method.to_string(),
                cell(r.pct_not_understood),
                cell(r.tmr),
                cell(r.readability),
                cell(r.control_error),
                cell(r.survey.understand),
                cell(r.survey.effort),
                cell(r.survey.natural),
                cell(r.survey.comfort),
                cell(r.survey.again),
                r.sessions.to_string(),
                r.rounds.to_string(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Default)]
struct Acc {
    sessions: usize,
    not_understood: Vec<f64>,
    tmr: Vec<f64>,
    readability: Vec<f64>,
    control_error: Vec<f64>,
    survey: [Vec<f64>; 5],
}

pub fn run(args: ScoreArgs) -> anyhow::Result<()> {
    let settings = args.common.settings()?;
    let mut manifest = RunManifest::new("score", &settings, json!({ "export": args.export }));
    manifest.input(&args.export)?;
    let text = std::fs::read_to_string(&args.export).with_context(|| format!("reading {}", args.export.display()))?;
    let export: StudyExport = serde_json::from_str(&text)
        .map_err(|e| fail(Exit::Validation, format!("{}: not a study export: {e}", args.export.display())))?;
    if export.schema_version != EXPORT_SCHEMA_VERSION {
        return Err(fail(Exit::Validation, format!("unsupported export schema version {}", export.schema_version)));
    }
    manifest.input_if_set(settings.lexicon.as_deref())?;
    let lexicon = resources::lexicon(&settings)?;
    let tokenizer = resources::tokenizer(&settings, &lexicon)?;
    let predictor = resources::predictor(&settings, &mut manifest)?;
    let readability = SurrogateReadability::default();

    let mut by_method: BTreeMap<Method, Acc> = BTreeMap::new();
    let (mut all_tmr, mut all_nu) = (Vec::new(), Vec::new());
    for s in &export.sessions {
        let acc = by_method.entry(s.method).or_default();
        acc.sessions += 1;
        for t in &s.turns {
            let utt = tokenizer.tokenize(&t.tutor)?;
            acc.readability.push(readability.score(&utt, &lexicon));
            if let Some(p) = &predictor {
                if let Ok(score) = p.score_tokens(&utt.lemmas(), ScoreMode::Expected) {
                    acc.control_error.push(control_error(score, s.level));
                }
            }
            if let Some(a) = &t.annotation {
                let nu = if a.understood_overall { 0.0 } else { 1.0 };
                acc.not_understood.push(nu);
                acc.tmr.push(a.tmr.tmr);
                all_nu.push(nu);
                all_tmr.push(a.tmr.tmr);
            }
        }
        if let Some(sv) = &s.survey {
            for (slot, (_, v)) in acc.survey.iter_mut().zip(sv.answers()) {
                slot.push(v as f64);
            }
        }
    }
    let rows = by_method
        .into_iter()
        .map(|(method, a)| {
            // answers() order: understand, effort, comfort, natural, again.
            let [understand, effort, comfort, natural, again] = a.survey.each_ref().map(|v| mean(v));
            MethodScores {
                method,
                sessions: a.sessions,
                rounds: a.tmr.len(),
                pct_not_understood: mean(&a.not_understood).map(|m| m * 100.0),
                tmr: mean(&a.tmr).map(|m| m * 100.0),
                readability: mean(&a.readability),
                control_error: mean(&a.control_error),
                surveys: a.survey[0].len(),
                survey: SurveyMeans { understand, effort, natural, comfort, again },
            }
        })
        .collect();
    let eval = HumanEval {
        schema_version: 1,
        readability_scorer: SURROGATE_READABILITY_NAME.to_string(),
        rows,
        tmr_not_understood_spearman: spearman(&all_tmr, &all_nu),
    };

    manifest.outputs = vec![HUMAN_EVAL_JSON.to_string(), HUMAN_EVAL_CSV.to_string()];
    manifest.write(&args.out)?;
    write_file(&args.out.join(HUMAN_EVAL_JSON), to_pretty_json(&eval))?;
    write_file(&args.out.join(HUMAN_EVAL_CSV), eval.to_csv())?;
    print!("{}", eval.to_csv());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        // Ranks y = 1.5, 1.5, 3.5, 3.5: cov 4, var 5 and 4.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((r - 4.0 / 20f64.sqrt()).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 3.0]), [3.5, 1.0, 3.5, 2.0]);
    }
}
