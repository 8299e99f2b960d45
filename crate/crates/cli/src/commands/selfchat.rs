use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use gradechat_core::control::Method;
use gradechat_core::metrics::{ScoreMode, Scorers, SurrogateReadability, TmrAggregation, SURROGATE_READABILITY_NAME};
use gradechat_core::selfchat::{
    aggregate_suite, append_transcripts, default_topics, plan_suite, run_suite, Agents, DRIFT_CSV, REPORT_CSV,
    REPORT_JSON, TRANSCRIPTS_JSONL,
};
use serde_json::json;

use crate::config::{parse_methods, Pairs};
use crate::failure::{fail, Exit};
use crate::manifest::RunManifest;
use crate::resources;
use crate::{Common, GenerationArgs};

pub fn parse_aggregation(s: &str) -> Result<TmrAggregation, String> {
    match s {
        "macro" => Ok(TmrAggregation::Macro),
        "micro" => Ok(TmrAggregation::Micro),
        _ => Err(format!("unknown TMR aggregation {s:?}; expected macro or micro")),
    }
}

#[derive(Debug, Clone)]
pub struct MethodList(Vec<Method>);

fn parse_method_list(s: &str) -> Result<MethodList, String> {
    parse_methods(s).map(MethodList)
}

#[derive(Args, Debug)]
pub struct SelfChatArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generation: GenerationArgs,
    /// Comma-separated: baseline, detailed, overgenerate, fudge.
    #[arg(long, value_parser = parse_method_list)]
    pub methods: Option<MethodList>,
    /// Tutor turns per dialogue.
    #[arg(long)]
    pub turns: Option<usize>,
    #[arg(long, value_enum)]
    pub pairs: Option<Pairs>,
    #[arg(long)]
    pub dialogues_per_pair: Option<usize>,
    /// Dialogues run concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// macro or micro.
    #[arg(long, value_parser = parse_aggregation)]
    pub tmr_aggregation: Option<TmrAggregation>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SelfChatArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    args.generation.apply(&mut settings);
    let sc = &mut settings.selfchat;
    if let Some(MethodList(v)) = args.methods {
        sc.methods = v;
    }
    if let Some(v) = args.turns {
        sc.turns = v;
    }
    if let Some(v) = args.pairs {
        sc.pairs = v;
    }
    if let Some(v) = args.dialogues_per_pair {
        sc.dialogues_per_pair = v;
    }
    if let Some(v) = args.jobs {
        sc.jobs = v;
    }
    if let Some(v) = args.tmr_aggregation {
        sc.tmr_aggregation = v;
    }
    settings.validate()?;
    let sc = settings.selfchat.clone();
    let mut manifest = RunManifest::new("selfchat-eval", &settings, json!({}));

    let stack = resources::tutor_stack(&settings, &mut manifest)?;
    let predictor = stack
        .engine
        .predictor
        .clone()
        .ok_or_else(|| fail(Exit::Dependency, "self-chat scoring needs a difficulty predictor: set predictor"))?;
    let student_lm = resources::chat_lm(&settings, &mut manifest, "student_lm")?;
    let ppl = resources::ppl_lm(&settings, &mut manifest)?;
    let readability = SurrogateReadability::default();

    let mut specs =
        plan_suite(&sc.methods, &default_topics, sc.dialogues_per_pair, sc.turns, manifest.sub_seed("suite"))?;
    if sc.pairs == Pairs::Diagonal {
        specs.retain(|s| s.tutor_level == s.student_level);
    }
    manifest.outputs = [TRANSCRIPTS_JSONL, REPORT_JSON, REPORT_CSV, DRIFT_CSV].iter().map(|s| s.to_string()).collect();
    manifest.write(&args.out)?;

    let transcripts_path = args.out.join(TRANSCRIPTS_JSONL);
    if transcripts_path.exists() {
        std::fs::remove_file(&transcripts_path).with_context(|| format!("replacing {}", transcripts_path.display()))?;
    }
    let agents = Agents {
        tutor: &stack.engine,
        student_lm: &student_lm,
        tokenizer: stack.tokenizer.as_ref(),
        scorers: Scorers {
            lexicon: &stack.lexicon,
            predictor: Some(&predictor),
            lm: Some(&ppl),
            readability: Some(&readability),
            score_mode: ScoreMode::Expected,
        },
    };
    log::info!("running {} dialogues with {} job(s)", specs.len(), sc.jobs);
    let transcripts = run_suite(&specs, &agents, sc.jobs)?;
    let aborted = transcripts.iter().filter(|t| t.error.is_some()).count();
    if aborted > 0 {
        log::warn!("{aborted} dialogue(s) aborted; see the error field in {TRANSCRIPTS_JSONL}");
    }
    append_transcripts(&transcripts_path, &transcripts)?;
    let report = aggregate_suite(&transcripts, sc.tmr_aggregation, Some(SURROGATE_READABILITY_NAME))?;
    report.write(&args.out)?;
    print!("{}", report.to_csv());
    Ok(())
}
