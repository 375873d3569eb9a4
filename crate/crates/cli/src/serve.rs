//! HTTP front end: every `/api/...` request goes through
//! `karma_core::api::route` under one lock, so log appends are serialized.
//! In-progress sessions are snapshotted periodically and restored on start;
//! only completed sessions ever reach the judgment log.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::any;
use axum::{Json, Router};
use clap::Args;
use karma_core::api::route;
use karma_core::game::{FileLog, GameHost, HostSnapshot, SystemClock};
use tower_http::services::ServeDir;

use crate::{lib_failure, load_corpus, load_plan, Failure};

pub const SNAPSHOT_FILE: &str = "sessions.json";

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Holds the judgment and questionnaire logs and the session snapshot.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Built client bundle to serve at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    snapshot_secs: u64,
    /// Seeds subreddit assignment, pair draws and session ids.
    #[arg(long)]
    seed: Option<u64>,
}

type SharedHost = Arc<Mutex<GameHost<FileLog, SystemClock>>>;

async fn api(State(host): State<SharedHost>, method: Method, uri: Uri, body: Bytes) -> Response {
    let (status, envelope) = {
        let mut host = host.lock().unwrap_or_else(|p| p.into_inner());
        route(&mut host, method.as_str(), uri.path(), &body)
    };
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(envelope)).into_response()
}

fn write_snapshot(dir: &Path, snapshot: &HostSnapshot) -> std::io::Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    std::fs::write(&tmp, serde_json::to_vec(snapshot)?)?;
    std::fs::rename(tmp, dir.join(SNAPSHOT_FILE))
}

fn read_snapshot(dir: &Path) -> Result<Option<HostSnapshot>, Failure> {
    let path = dir.join(SNAPSHOT_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Failure::invalid(e).context(format!("corrupt snapshot {}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Failure::io(e)),
    }
}

fn save(host: &SharedHost, dir: &Path) {
    let snapshot = host.lock().unwrap_or_else(|p| p.into_inner()).snapshot();
    if let Err(e) = write_snapshot(dir, &snapshot) {
        eprintln!("warning: snapshot failed: {e}");
    }
}

pub fn run(a: ServeArgs) -> Result<(), Failure> {
    let plan = load_plan(&a.plan)?;
    let corpus = load_corpus(&a.corpus)?;
    std::fs::create_dir_all(&a.data_dir).map_err(Failure::io)?;
    let seed = a.seed.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    });
    let mut host = GameHost::with_file_log(plan, corpus, &a.data_dir, seed).map_err(lib_failure)?;
    if let Some(snapshot) = read_snapshot(&a.data_dir)? {
        eprintln!("restored {} in-progress sessions", snapshot.sessions.len());
        host.restore(snapshot);
    }
    let host: SharedHost = Arc::new(Mutex::new(host));

    let mut app = Router::new()
        .route("/api", any(api))
        .route("/api/{*rest}", any(api))
        .with_state(host.clone());
    if let Some(dir) = &a.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }

    let runtime = tokio::runtime::Runtime::new().map_err(Failure::io)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(a.host, a.port))
            .await
            .map_err(|e| Failure::io(e).context(format!("cannot bind port {}", a.port)))?;
        let addr = listener.local_addr().map_err(Failure::io)?;
        eprintln!("listening on http://{addr}");

        let dir = a.data_dir.clone();
        let snap_host = host.clone();
        let period = Duration::from_secs(a.snapshot_secs.max(1));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.tick().await;
            loop {
                tick.tick().await;
                save(&snap_host, &dir);
            }
        });

        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(Failure::io)?;
        save(&host, &a.data_dir);
        Ok(())
    })
}
