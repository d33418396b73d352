use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use celltrace_core::triage::RuleSet;
use celltrace_registry::api;
use celltrace_registry::{Registry, RegistryConfig};
use clap::Args;

use crate::{CliError, DataDir};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to listen on; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[command(flatten)]
    data: DataDir,
    /// Triage rule table (JSON); the built-in table is used when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
}

pub fn run(a: ServeArgs) -> Result<(), CliError> {
    let rules = match &a.rules {
        Some(p) => RuleSet::from_file(p).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?,
        None => RuleSet::default(),
    };
    let mut config = RegistryConfig::new(&a.data.data_dir);
    config.rules = rules;
    let registry = Arc::new(Registry::open(config)?);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Failed(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        api::serve(listener, registry, api::shutdown_signal())
            .await
            .map_err(|e| CliError::Failed(format!("server error: {e}")))?;
        tracing::info!("shut down");
        Ok(())
    })
}
