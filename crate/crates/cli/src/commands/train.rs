use std::path::PathBuf;

use clap::{Args, ValueEnum};
use gradechat_core::classifier::{train_from_sentences, LabeledSentence, TrainConfig, TrainReport};
use gradechat_core::lexicon::read_level_corpus;
use gradechat_core::lm::{train_ngram, NgramConfig};
use serde::Serialize;
use serde_json::json;

use super::{to_pretty_json, write_file};
use crate::manifest::RunManifest;
use crate::resources;
use crate::Common;

pub const PREDICTOR_FILE: &str = "predictor.json";
pub const NGRAM_FILE: &str = "ngram.json";
pub const REPORT_FILE: &str = "train_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Predictor,
    Ngram,
    Both,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of n5.txt..n1.txt, one sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub what: Target,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub ngram_order: Option<usize>,
    #[arg(long)]
    pub ngram_delta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct NgramSummary {
    sentences: usize,
    vocab_size: usize,
}

#[derive(Serialize)]
struct Report {
    sentences: usize,
    predictor: Option<TrainReport>,
    ngram: Option<NgramSummary>,
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    let t = &mut settings.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.embedding_dim {
        t.embedding_dim = v;
    }
    if let Some(v) = args.ngram_order {
        t.ngram_order = v;
    }
    if let Some(v) = args.ngram_delta {
        t.ngram_delta = v;
    }
    settings.validate()?;
    let mut manifest = RunManifest::new("train", &settings, json!({ "corpus": args.corpus, "what": args.what }));
    manifest.input(&args.corpus)?;
    manifest.input_if_set(settings.lexicon.as_deref())?;

    let lexicon = resources::lexicon(&settings)?;
    let tokenizer = resources::tokenizer(&settings, &lexicon)?;
    let mut sentences = Vec::new();
    for (text, level) in read_level_corpus(&args.corpus)? {
        let tokens: Vec<String> = tokenizer.tokenize(&text)?.lemmas().into_iter().map(String::from).collect();
        if !tokens.is_empty() {
            sentences.push(LabeledSentence { tokens, level });
        }
    }

    let want_predictor = args.what != Target::Ngram;
    let want_ngram = args.what != Target::Predictor;
    manifest.outputs = [(want_predictor, PREDICTOR_FILE), (want_ngram, NGRAM_FILE), (true, REPORT_FILE)]
        .iter()
        .filter(|(w, _)| *w)
        .map(|(_, f)| f.to_string())
        .collect();
    manifest.write(&args.out)?;

    let mut report = Report { sentences: sentences.len(), predictor: None, ngram: None };
    if want_predictor {
        let t = &settings.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            embedding_dim: t.embedding_dim,
            init_scale: t.init_scale,
            seed: manifest.sub_seed("predictor"),
        };
        let (predictor, r) = train_from_sentences(&sentences, cfg)?;
        log::info!("predictor: {} examples, final loss {:?}", r.examples, r.epoch_losses.last());
        predictor.save(&args.out.join(PREDICTOR_FILE))?;
        report.predictor = Some(r);
    }
    if want_ngram {
        let corpus: Vec<Vec<String>> = sentences.iter().map(|s| s.tokens.clone()).collect();
        let cfg = NgramConfig {
            order: settings.train.ngram_order,
            delta: settings.train.ngram_delta,
            sentence_boundaries: true,
        };
        let joiner = if resources::joins_with_spaces(&settings) { " " } else { "" };
        let lm = train_ngram(&corpus, cfg)?.with_name("ngram").with_joiner(joiner);
        report.ngram = Some(NgramSummary { sentences: corpus.len(), vocab_size: lm.vocab_size() });
        lm.save(&args.out.join(NGRAM_FILE))?;
    }
    write_file(&args.out.join(REPORT_FILE), to_pretty_json(&report))?;
    Ok(())
}
