use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use gradechat_service::{AppState, ServiceConfig};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{resources, Common, GenerationArgs};

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[arg(long, env = "GRADECHAT_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Session logs and the run manifest are kept here.
    #[arg(long, env = "GRADECHAT_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

pub fn run(args: ServeArgs) -> anyhow::Result<()> {
    let mut settings = args.common.settings()?;
    args.generation.apply(&mut settings);
    settings.validate()?;
    let mut manifest = RunManifest::new("serve", &settings, json!({ "bind": args.bind, "data_dir": args.data_dir }));
    let stack = resources::tutor_stack(&settings, &mut manifest)?;
    manifest.outputs = vec!["sessions/".to_string()];
    manifest.write(&args.data_dir)?;

    let mut cfg = ServiceConfig::new(&args.data_dir);
    cfg.seed = manifest.sub_seed("chat");
    let state = AppState::open(cfg, stack.engine)?;

    let runtime =
        tokio::runtime::Builder::new_multi_thread().enable_all().build().context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(&args.bind).await.with_context(|| format!("binding {}", args.bind))?;
        let addr = listener.local_addr()?;
        log::info!("listening on http://{addr}");
        eprintln!("listening on http://{addr}");
        gradechat_service::serve(listener, state).await.context("serving")
    })
}
