//! `gradechat`: lexicon building, model training, interactive chat, self-chat
//! evaluation, study scoring and the study service.

mod commands;
mod config;
mod failure;
mod manifest;
mod resources;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradechat_core::Level;

use crate::config::{parse_level, Provider, Settings};

#[derive(Parser, Debug)]
#[command(name = "gradechat", version, about = "Difficulty-controlled conversation for Japanese learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build per-level lexicon files from vocabulary decks or a level-tagged corpus.
    BuildVocab(commands::build_vocab::BuildVocabArgs),
    /// Train the difficulty predictor and an n-gram model on a level-tagged corpus.
    Train(commands::train::TrainArgs),
    /// Chat with a tutor in the terminal, one student turn per input line.
    Chat(commands::chat::ChatArgs),
    /// Run tutor/student self-chat over all level pairs and write the report.
    SelfchatEval(commands::selfchat::SelfChatArgs),
    /// Summarize a study export into a per-method table.
    Score(commands::score::ScoreArgs),
    /// Re-aggregate a self-chat transcript file.
    Report(commands::report::ReportArgs),
    /// Run the study HTTP service.
    Serve(commands::serve::ServeArgs),
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lexicon directory written by build-vocab.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Predictor file written by train.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long, value_enum, env = "GRADECHAT_PROVIDER")]
    pub provider: Option<Provider>,
    /// N-gram model file for the ngram provider.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Environment variable that holds the remote API key.
    #[arg(long, env = "GRADECHAT_API_KEY_ENV")]
    pub api_key_env: Option<String>,
    /// Tokenizer backend: builtin, whitespace or external:<name>.
    #[arg(long)]
    pub tokenizer: Option<String>,
}

impl Common {
    pub fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = Settings::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.lexicon {
            s.lexicon = Some(v.clone());
        }
        if let Some(v) = &self.predictor {
            s.predictor = Some(v.clone());
        }
        if let Some(v) = self.provider {
            s.lm.provider = v;
        }
        if let Some(v) = &self.model {
            s.lm.model = Some(v.clone());
        }
        if let Some(v) = &self.api_key_env {
            s.lm.api_key_env = v.clone();
        }
        if let Some(v) = &self.tokenizer {
            s.tokenizer.backend = v.clone();
        }
        Ok(s)
    }
}

/// Generation controls.
#[derive(Args, Debug, Clone, Default)]
pub struct GenerationArgs {
    /// FUDGE interpolation weight in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// FUDGE candidate set size.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// FUDGE target level; defaults to the learner's level.
    #[arg(long, value_parser = parse_level)]
    pub target_level: Option<Level>,
    /// Overgenerate candidate count.
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Known expressions listed in the detailed prompt.
    #[arg(long)]
    pub known_expressions: Option<usize>,
}

impl GenerationArgs {
    pub fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.lambda {
            s.fudge.lambda = v;
        }
        if let Some(v) = self.top_k {
            s.fudge.top_k = v;
        }
        if let Some(v) = self.target_level {
            s.fudge.target_level = Some(v);
        }
        if let Some(v) = self.candidates {
            s.overgenerate_candidates = v;
        }
        if let Some(v) = self.known_expressions {
            s.known_expressions = v;
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildVocab(a) => commands::build_vocab::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Chat(a) => commands::chat::run(a),
        Command::SelfchatEval(a) => commands::selfchat::run(a),
        Command::Score(a) => commands::score::run(a),
        Command::Report(a) => commands::report::run(a),
        Command::Serve(a) => commands::serve::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e))
        }
    }
}
