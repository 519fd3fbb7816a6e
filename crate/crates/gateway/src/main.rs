use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use autopilot_core::events::{Event, EventBus};
use autopilot_core::kernel::TaskEnv;
use autopilot_core::web::{observe_snapshot, AXSnapshot, DEFAULT_OBSERVATION_BUDGET};
use autopilot_gateway::app::feedback_ndjson;
use autopilot_gateway::{router, AppState, Settings, Store};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "autopilot", version, about = "Task kernel gateway and tools")]
struct Cli {
    /// SQLite database path (overrides AUTOPILOT_DB).
    #[arg(long, global = true)]
    db: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Create a user and print its bearer token.
    UserAdd {
        #[arg(long)]
        name: String,
    },
    /// Run one task locally and print its events, trace and answer.
    Run {
        instruction: String,
        /// Scripted policy fixture (`{"entries": [...]}`).
        #[arg(long)]
        policy_script: Option<PathBuf>,
        /// Directory of simulated sites for web perception.
        #[arg(long)]
        simweb: Option<PathBuf>,
        /// Print the full task trace as JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Print the observation the web policy would see for an AX snapshot.
    Observe {
        snapshot: PathBuf,
        #[arg(long, default_value_t = DEFAULT_OBSERVATION_BUDGET)]
        budget: usize,
    },
    /// Write feedback records as NDJSON.
    ExportFeedback {
        /// Only this user's records.
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn settings(cli_db: Option<PathBuf>) -> Result<Settings, String> {
    let mut s = Settings::from_env().map_err(|e| e.to_string())?;
    if let Some(db) = cli_db {
        s.db = db;
    }
    Ok(s)
}

fn open_store(s: &Settings) -> Result<Arc<Store>, String> {
    Store::open(&s.db).map(Arc::new).map_err(|e| format!("{}: {e}", s.db.display()))
}

async fn serve(s: Settings) -> Result<(), String> {
    let store = open_store(&s)?;
    let kernel = s.kernel().map_err(|e| e.to_string())?;
    let state = AppState::new(store, kernel, s.gateway()).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(&s.addr).await.map_err(|e| format!("{}: {e}", s.addr))?;
    tracing::info!(addr = %s.addr, db = %s.db.display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

fn run_local(mut s: Settings, instruction: &str, script: Option<PathBuf>, simweb: Option<PathBuf>, trace: bool) -> Result<bool, String> {
    if script.is_some() {
        s.policy_script = script;
    }
    if simweb.is_some() {
        s.simweb_dir = simweb;
    }
    let kernel = s.kernel().map_err(|e| e.to_string())?;
    let sink = |e: &Event| println!("{}", e.to_json());
    let env = TaskEnv::new("local", "cli", kernel.runtime().create_session()).with_events(EventBus::new(Arc::new(sink)));
    let result = kernel.run(&env, instruction);
    if trace {
        println!("{}", result.trace.to_json());
    }
    eprintln!("[{}] {}", result.status.as_str(), result.answer);
    Ok(result.error.is_none())
}

fn observe(path: &PathBuf, budget: usize) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let snapshot = AXSnapshot::from_json(&text).map_err(|e| e.to_string())?;
    let (_, obs) = observe_snapshot(&snapshot, budget);
    println!("{}", obs.render());
    Ok(())
}

fn export(s: &Settings, user: Option<String>, out: Option<PathBuf>) -> Result<(), String> {
    let store = open_store(s)?;
    let users = match user {
        Some(u) => vec![u],
        None => store.users().map_err(|e| e.to_string())?.into_iter().map(|u| u.user_id).collect(),
    };
    let mut body = String::new();
    for u in users {
        body += &feedback_ndjson(&store.feedback_for_user(&u).map_err(|e| e.to_string())?);
    }
    match out {
        Some(path) => std::fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = settings(cli.db).and_then(|s| match cli.command {
        Command::Serve { addr } => {
            let mut s = s;
            if let Some(a) = addr {
                s.addr = a;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(serve(s))
        }
        Command::UserAdd { name } => {
            let (user, token) = open_store(&s)?.add_user(&name).map_err(|e| e.to_string())?;
            println!("user_id={}\ntoken={token}", user.user_id);
            Ok(())
        }
        Command::Run { instruction, policy_script, simweb, trace } => {
            run_local(s, &instruction, policy_script, simweb, trace)
                .and_then(|ok| if ok { Ok(()) } else { Err("task failed".into()) })
        }
        Command::Observe { snapshot, budget } => observe(&snapshot, budget),
        Command::ExportFeedback { user, out } => export(&s, user, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
