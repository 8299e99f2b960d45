use std::path::PathBuf;

use clap::Args;
use gradechat_core::lexicon::{
    accumulate_corpus_stats, build_gold_lexicon, derive_heuristic_bins, load_deck_dir, read_level_corpus,
    HeuristicThresholds, LevelLexicon,
};
use gradechat_core::Level;
use serde_json::json;

use super::write_file;
use crate::failure::{fail, Exit};
use crate::manifest::RunManifest;
use crate::resources::{self, LEXICON_FILE};
use crate::Common;

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of n5..n1 decks (.tsv or .json).
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub decks: Option<PathBuf>,
    /// Directory of n5.txt..n1.txt level-tagged sentences, binned by frequency.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub global_floor: Option<f64>,
    #[arg(long)]
    pub level_floor: Option<f64>,
    #[arg(long)]
    pub assign_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: BuildVocabArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    if let Some(v) = args.global_floor {
        settings.heuristic.global_floor = v;
    }
    if let Some(v) = args.level_floor {
        settings.heuristic.level_floor = v;
    }
    if let Some(v) = args.assign_threshold {
        settings.heuristic.assign_threshold = v;
    }
    settings.validate()?;
    let mut manifest =
        RunManifest::new("build-vocab", &settings, json!({ "decks": args.decks, "corpus": args.corpus }));

    let lexicon: LevelLexicon = if let Some(dir) = &args.decks {
        manifest.input(dir)?;
        let decks = load_deck_dir(dir)?;
        for deck in &decks {
            log::info!("{}: {} cards, {} malformed lines", deck.level, deck.cards.len(), deck.malformed);
        }
        build_gold_lexicon(&decks)?
    } else {
        let dir = args.corpus.as_ref().expect("clap requires decks or corpus");
        manifest.input(dir)?;
        if settings.tokenizer.backend == "builtin" && settings.lexicon.is_none() {
            return Err(fail(
                Exit::Validation,
                "corpus binning needs a segmenting tokenizer: pass --tokenizer whitespace, an external:<name> backend, or a --lexicon to tokenize with",
            ));
        }
        manifest.input_if_set(settings.lexicon.as_deref())?;
        let dictionary = resources::lexicon(&settings)?;
        let tokenizer = resources::tokenizer(&settings, &dictionary)?;
        let sentences = read_level_corpus(dir)?;
        let stats = accumulate_corpus_stats(sentences.iter().map(|(s, l)| (s.as_str(), *l)), tokenizer.as_ref())?;
        let h = &settings.heuristic;
        derive_heuristic_bins(
            &stats,
            HeuristicThresholds {
                global_floor: h.global_floor,
                level_floor: h.level_floor,
                assign_threshold: h.assign_threshold,
            },
        )
    };

    manifest.outputs =
        Level::ALL.iter().map(|l| format!("{}.json", l.file_stem())).chain([LEXICON_FILE.to_string()]).collect();
    manifest.write(&args.out)?;
    lexicon.write_level_files(&args.out)?;
    write_file(&args.out.join(LEXICON_FILE), lexicon.to_json())?;
    for level in Level::ALL {
        log::info!("{level}: {} entries", lexicon.at_level(level).count());
    }
    Ok(())
}
