use std::fs::File;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use gradechat_core::control::Method;
use gradechat_core::lm::sampling::sub_seed;
use gradechat_core::lm::{ChatTurn, Role};
use gradechat_core::Level;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_level, parse_method};
use crate::manifest::{output_path, RunManifest};
use crate::resources;
use crate::{Common, GenerationArgs};

#[derive(Args, Debug)]
pub struct ChatArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generation: GenerationArgs,
    /// baseline, detailed, overgenerate or fudge.
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_parser = parse_level, default_value = "N5")]
    pub level: Level,
    /// Tutor turns before the session ends.
    #[arg(long, default_value_t = 6)]
    pub turns: usize,
    /// Transcript file name inside --out.
    #[arg(long, default_value = "transcript.jsonl")]
    pub transcript: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// One line of a chat transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub turn_index: usize,
    pub role: Role,
    pub text: String,
}

pub fn run(args: ChatArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    args.generation.apply(&mut settings);
    settings.validate()?;
    let mut manifest = RunManifest::new(
        "chat",
        &settings,
        json!({ "method": args.method, "level": args.level, "turns": args.turns, "transcript": args.transcript }),
    );
    let transcript_path = output_path(&args.out, &args.transcript)?;
    let stack = resources::tutor_stack(&settings, &mut manifest)?;
    manifest.outputs = vec![args.transcript.clone()];
    manifest.write(&args.out)?;
    if let Some(parent) = transcript_path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut transcript =
        File::create(&transcript_path).with_context(|| format!("creating {}", transcript_path.display()))?;

    let chat_seed = manifest.sub_seed("chat");
    let mut turns: Vec<ChatTurn> = Vec::new();
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut index = 0;
    eprintln!("{} tutor at {}; one message per line, /quit to stop", args.method, args.level);
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        index += 1;
        turns.push(ChatTurn { role: Role::Student, text: text.to_string() });
        let reply = stack.engine.respond(args.method, args.level, &turns, sub_seed(chat_seed, index as u64))?;
        turns.push(ChatTurn { role: Role::Tutor, text: reply.text.clone() });
        for (role, text) in [(Role::Student, text), (Role::Tutor, reply.text.as_str())] {
            let rec = ChatRecord { turn_index: index, role, text: text.to_string() };
            serde_json::to_writer(&mut transcript, &rec)?;
            transcript.write_all(b"\n")?;
        }
        transcript.sync_data().with_context(|| format!("syncing {}", transcript_path.display()))?;
        writeln!(stdout, "tutor> {}", reply.text)?;
        stdout.flush()?;
        if index >= args.turns {
            break;
        }
    }
    Ok(())
}
