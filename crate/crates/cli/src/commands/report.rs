use std::path::PathBuf;

use clap::Args;
use gradechat_core::metrics::{TmrAggregation, SURROGATE_READABILITY_NAME};
use gradechat_core::selfchat::{aggregate_suite, read_transcripts, DRIFT_CSV, REPORT_CSV, REPORT_JSON};
use serde_json::json;

use super::selfchat::parse_aggregation;
use super::{to_pretty_json, write_file};
use crate::manifest::RunManifest;
use crate::Common;

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Transcript file written by selfchat-eval.
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Also write the per-turn TMR drift series as CSV.
    #[arg(long)]
    pub plot: bool,
    /// macro or micro.
    #[arg(long, value_parser = parse_aggregation)]
    pub tmr_aggregation: Option<TmrAggregation>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ReportArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    if let Some(v) = args.tmr_aggregation {
        settings.selfchat.tmr_aggregation = v;
    }
    let mut manifest =
        RunManifest::new("report", &settings, json!({ "transcripts": args.transcripts, "plot": args.plot }));
    manifest.input(&args.transcripts)?;
    let transcripts = read_transcripts(&args.transcripts)?;
    let scored = transcripts.iter().any(|t| t.tutor_metrics().any(|m| m.readability.is_some()));
    let report =
        aggregate_suite(&transcripts, settings.selfchat.tmr_aggregation, scored.then_some(SURROGATE_READABILITY_NAME))?;

    manifest.outputs = vec![REPORT_JSON.to_string(), REPORT_CSV.to_string()];
    if args.plot {
        manifest.outputs.push(DRIFT_CSV.to_string());
    }
    manifest.write(&args.out)?;
    write_file(&args.out.join(REPORT_JSON), to_pretty_json(&report))?;
    write_file(&args.out.join(REPORT_CSV), report.to_csv())?;
    if args.plot {
        write_file(&args.out.join(DRIFT_CSV), report.drift_csv())?;
    }
    print!("{}", report.to_csv());
    Ok(())
}
