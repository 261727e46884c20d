use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vfmchat_core::prompt::PromptSet;
use vfmchat_core::render::render_files;
use vfmchat_core::workspace::ImageSource;
use vfmchat_server::replay::{replay, ReplayOutcome};
use vfmchat_server::session::{provenance_of_dir, TRANSCRIPT_FILE};
use vfmchat_server::{default_backend_factory, http, SessionConfig, SessionStore, Shared, Upload};

#[derive(Parser)]
#[command(name = "vfmchat", version, about = "Chat with a language model that drives visual tools")]
struct Cli {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Completion backend: remote, scripted, or recording.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Transcript the scripted backend serves from.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// Comma separated tool names to enable (default: all).
    #[arg(long, global = true)]
    tools: Option<String>,
    /// Directory holding session data.
    #[arg(long, global = true, default_value = "vfmchat-data")]
    workspace: PathBuf,
    #[arg(long, global = true, default_value_t = 7860)]
    port: u16,
    /// Directory with prefix.txt, format_instructions.txt and suffix.txt.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive chat on stdin. `/image <path>` attaches a file to the
    /// next message; `/quit` exits.
    Repl,
    /// Serve the HTTP API on 127.0.0.1.
    Serve,
    /// Re-run a recorded transcript and check it reproduces.
    Replay { transcript: PathBuf },
    /// Write the tool blocks and prompt sections to a directory.
    RenderPrompts {
        #[arg(long, default_value = "rendered")]
        out: PathBuf,
    },
    /// Print the derivation graph of a session or image directory as JSON.
    Provenance { dir: PathBuf },
    Tools {
        #[command(subcommand)]
        command: ToolsCommand,
    },
}

#[derive(Subcommand)]
enum ToolsCommand {
    /// One line per tool: name and input arity.
    List,
}

fn session_config(cli: &Cli) -> Result<SessionConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SessionConfig::parse_text(&text)?
        }
        None => SessionConfig::default(),
    };
    if let Some(b) = &cli.backend {
        cfg.set("backend.kind", b)?;
    }
    if let Some(t) = &cli.transcript {
        cfg.set("backend.transcript", &t.display().to_string())?;
    }
    if let Some(t) = &cli.tools {
        cfg.set("tools", t)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn shared(cli: &Cli) -> Result<Arc<Shared>> {
    let mut shared = Shared::default();
    if let Some(dir) = &cli.prompts {
        shared.prompts = PromptSet::load_dir(dir)?;
    }
    Ok(Arc::new(shared))
}

fn store(cli: &Cli) -> Result<Arc<SessionStore>> {
    Ok(Arc::new(SessionStore::new(
        &cli.workspace,
        shared(cli)?,
        session_config(cli)?,
        default_backend_factory(),
    )?))
}

fn repl(cli: &Cli) -> Result<()> {
    let store = store(cli)?;
    let info = store.create_with(store.defaults().clone())?;
    let dir = store.root().join(&info.id);
    eprintln!("session {} in {}", info.id, dir.display());
    if store.defaults().backend_kind == vfmchat_server::config::BackendKind::Recording {
        eprintln!("recording to {}", dir.join(TRANSCRIPT_FILE).display());
    }
    let mut attach: Option<Upload> = None;
    let stdin = io::stdin();
    let mut out = io::stdout();
    write!(out, "> ")?;
    out.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line == "/quit" {
            break;
        }
        if let Some(path) = line.strip_prefix("/image ") {
            let path = Path::new(path.trim());
            match fs::read(path) {
                Ok(bytes) => {
                    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    attach = Some(Upload { name, bytes });
                    eprintln!("attached {}", path.display());
                }
                Err(e) => eprintln!("cannot read {}: {e}", path.display()),
            }
        } else if !line.is_empty() {
            match store.post_message(&info.id, line, attach.as_ref()) {
                Ok(r) => {
                    attach = None;
                    for s in &r.trace {
                        eprintln!("  [{}] {}({}) -> {}", s.j, s.tool, s.input, s.observation);
                    }
                    for f in &r.files {
                        if f.kind != ImageSource::Upload {
                            eprintln!("  file {}", dir.join(&f.path).display());
                        }
                    }
                    writeln!(out, "AI: {}", r.final_answer)?;
                }
                Err(e) => eprintln!("error: {e}"),
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    Ok(())
}

async fn serve(cli: &Cli) -> Result<()> {
    let store = store(cli)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], cli.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, root = %store.root().display(), "serving");
    axum::serve(listener, http::router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn replay_cmd(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scratch = tempfile::tempdir()?;
    match replay(shared(cli)?, &text, scratch.path())? {
        ReplayOutcome::Match(r) => {
            println!("MATCH ({} rounds, {} completions)", r.rounds, r.completions);
            Ok(ExitCode::SUCCESS)
        }
        ReplayOutcome::Mismatch(detail) => {
            eprintln!("MISMATCH {detail}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn render_prompts(cli: &Cli, out: &Path) -> Result<()> {
    let shared = shared(cli)?;
    let registry = match &cli.tools {
        Some(t) => {
            let mut cfg = SessionConfig::default();
            cfg.set("tools", t)?;
            let names = cfg.tools.unwrap_or_default();
            shared.catalog.with_enabled(&names)?
        }
        None => shared.catalog.clone(),
    };
    for (rel, content) in render_files(&shared.prompts, &registry) {
        let dest = out.join(&rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&dest, content)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn provenance_cmd(dir: &Path) -> Result<()> {
    let image_dir = if dir.join("image").is_dir() {
        dir.join("image")
    } else if dir.is_dir() {
        dir.to_path_buf()
    } else {
        bail!("{} is not a directory", dir.display());
    };
    let graph = provenance_of_dir(&image_dir, "image")?;
    println!("{}", serde_json::to_string_pretty(&graph)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Repl => repl(&cli)?,
        Command::Serve => tokio::runtime::Runtime::new()?.block_on(serve(&cli))?,
        Command::Replay { transcript } => return replay_cmd(&cli, transcript),
        Command::RenderPrompts { out } => render_prompts(&cli, out)?,
        Command::Provenance { dir } => provenance_cmd(dir)?,
        Command::Tools {
            command: ToolsCommand::List,
        } => {
            for spec in shared(&cli)?.catalog.specs() {
                println!("{}\t{}", spec.name, spec.input_arity());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
