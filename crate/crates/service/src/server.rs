use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::mpsc::UnboundedSender;
use tower_http::services::ServeDir;

use lfd_core::env::{make_game, GameConfig, GameId};

use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::{EndReason, Session, SessionConfig, DEFAULT_FPS, RECORD_EVERY, TIME_CAP};
use crate::{Result, ServiceError};

const FALLBACK_PAGE: &str = include_str!("../assets/index.html");

/// How session ticks are spaced in wall-clock time. Session time is always
/// counted in ticks, so pacing never changes what gets recorded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pacing {
    /// One tick every `1 / fps` seconds.
    RealTime,
    Interval(Duration),
    /// As fast as possible; meant for tests.
    Unpaced,
}

impl Pacing {
    fn period(self, fps: u32) -> Option<Duration> {
        match self {
            Pacing::RealTime => Some(Duration::from_secs_f64(1.0 / fps as f64)),
            Pacing::Interval(d) => Some(d),
            Pacing::Unpaced => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Each session records into its own subdirectory.
    pub out_dir: PathBuf,
    /// Built play client; a minimal page is served when absent.
    pub static_dir: Option<PathBuf>,
    pub cell_px: usize,
    pub fps: u32,
    pub record_every: u32,
    pub time_cap: Duration,
    pub pacing: Pacing,
}

impl ServerConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            out_dir: out_dir.into(),
            static_dir: None,
            cell_px: GameConfig::default().cell_px,
            fps: DEFAULT_FPS,
            record_every: RECORD_EVERY,
            time_cap: TIME_CAP,
            pacing: Pacing::RealTime,
        }
    }

    fn game_config(&self, id: GameId) -> GameConfig {
        GameConfig {
            cell_px: self.cell_px,
            ..GameConfig::new(id)
        }
    }
}

struct AppState {
    config: ServerConfig,
    sessions: AtomicU64,
}

#[derive(Serialize)]
struct GameInfo {
    id: GameId,
    actions: Vec<&'static str>,
    rules: String,
}

pub fn router(config: ServerConfig) -> Router {
    let static_dir = config.static_dir.clone();
    let state = Arc::new(AppState {
        config,
        sessions: AtomicU64::new(0),
    });
    let router = Router::new()
        .route("/games", get(list_games))
        .route("/play", get(play))
        .with_state(state);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router.fallback(|| async { Html(FALLBACK_PAGE) }),
    }
}

pub async fn serve(listener: TcpListener, config: ServerConfig) -> Result<()> {
    axum::serve(listener, router(config)).await?;
    Ok(())
}

async fn list_games(State(state): State<Arc<AppState>>) -> Response {
    let mut games = Vec::new();
    for id in GameId::ALL {
        match make_game(&state.config.game_config(id)) {
            Ok(g) => games.push(GameInfo {
                id,
                actions: g.actions().iter().map(|a| a.name()).collect(),
                rules: g.rules().to_string(),
            }),
            Err(e) => tracing::warn!(game = %id, error = %e, "game unavailable"),
        }
    }
    Json(games).into_response()
}

async fn play(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

enum Command {
    Key { code: String, down: bool },
    Stop,
    Disconnect,
}

struct Running {
    commands: mpsc::Sender<Command>,
    done: Arc<AtomicBool>,
    thread: JoinHandle<()>,
}

async fn connection(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = tokio::sync::mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let mut running: Option<Running> = None;
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match ClientMessage::parse(&text) {
            Err(e) => Some(e.to_string()),
            Ok(ClientMessage::Start { game, seed }) => {
                if running.as_ref().is_some_and(|r| !r.done.load(Ordering::SeqCst)) {
                    Some("a session is already active on this connection".to_string())
                } else {
                    match start(&state, &game, seed, out.clone()) {
                        Ok(r) => {
                            running = Some(r);
                            None
                        }
                        Err(e) => Some(e.to_string()),
                    }
                }
            }
            Ok(ClientMessage::Key { code, down }) => command(&running, Command::Key { code, down }),
            Ok(ClientMessage::Stop) => command(&running, Command::Stop),
        };
        if let Some(message) = reply {
            let _ = out.send(ServerMessage::error(message));
        }
    }

    if let Some(r) = running {
        let _ = r.commands.send(Command::Disconnect);
        let _ = tokio::task::spawn_blocking(move || r.thread.join()).await;
    }
    drop(out);
    let _ = writer.await;
}

fn command(running: &Option<Running>, cmd: Command) -> Option<String> {
    match running {
        Some(r) if !r.done.load(Ordering::SeqCst) => r.commands.send(cmd).err().map(|_| "session has ended".to_string()),
        _ => Some("no active session".to_string()),
    }
}

fn start(state: &AppState, game: &str, seed: Option<u64>, out: UnboundedSender<ServerMessage>) -> Result<Running> {
    let id: GameId = game.parse()?;
    let config = &state.config;
    let seed = seed.unwrap_or_else(fresh_seed);
    let n = state.sessions.fetch_add(1, Ordering::SeqCst);
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let session_id = format!("{}-s{seed}-{started}-{n}", id.as_str());
    let mut session_config = SessionConfig::new(config.game_config(id), seed, config.out_dir.join(&session_id));
    session_config.fps = config.fps;
    session_config.record_every = config.record_every;
    session_config.time_cap = config.time_cap;
    let (session, manifest) = Session::start(session_id, session_config)?;
    let actions = manifest.actions.clone();
    out.send(ServerMessage::Manifest(manifest))
        .map_err(|_| ServiceError::State("connection closed".into()))?;

    let (commands, inbox) = mpsc::channel();
    let done = Arc::new(AtomicBool::new(false));
    let period = config.pacing.period(config.fps);
    let flag = done.clone();
    let thread = std::thread::Builder::new()
        .name("session".into())
        .spawn(move || {
            tick_loop(session, &actions, inbox, &out, period, &flag);
        })?;
    Ok(Running { commands, done, thread })
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    (nanos as u64) % 1_000_000
}

/// Applies a command; returns the reason to end the session, if any.
fn apply(session: &mut Session, cmd: Command) -> Option<EndReason> {
    match cmd {
        Command::Key { code, down } => {
            session.key(&code, down);
            None
        }
        Command::Stop => Some(EndReason::Stopped),
        Command::Disconnect => Some(EndReason::Disconnect),
    }
}

fn tick_loop(
    mut session: Session,
    actions: &[String],
    inbox: mpsc::Receiver<Command>,
    out: &UnboundedSender<ServerMessage>,
    period: Option<Duration>,
    done: &AtomicBool,
) {
    let mut deadline = Instant::now();
    let mut stop = None;
    'run: loop {
        loop {
            let cmd = match period {
                Some(_) => {
                    let now = Instant::now();
                    if now >= deadline {
                        match inbox.try_recv() {
                            Ok(c) => Ok(c),
                            Err(TryRecvError::Empty) => break,
                            Err(TryRecvError::Disconnected) => Err(()),
                        }
                    } else {
                        match inbox.recv_timeout(deadline - now) {
                            Ok(c) => Ok(c),
                            Err(RecvTimeoutError::Timeout) => break,
                            Err(RecvTimeoutError::Disconnected) => Err(()),
                        }
                    }
                }
                None => match inbox.try_recv() {
                    Ok(c) => Ok(c),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => Err(()),
                },
            };
            stop = match cmd {
                Ok(c) => apply(&mut session, c),
                Err(()) => Some(EndReason::Disconnect),
            };
            if stop.is_some() {
                break 'run;
            }
        }
        match session.tick() {
            Ok(report) => {
                let name = actions.get(report.action).map(String::as_str).unwrap_or("?");
                let _ = out.send(ServerMessage::frame(&report, name));
                if report.ended.is_some() {
                    break;
                }
            }
            Err(e) => {
                let _ = out.send(ServerMessage::error(e.to_string()));
                stop = Some(EndReason::Stopped);
                break;
            }
        }
        if let Some(p) = period {
            deadline += p;
            let now = Instant::now();
            if deadline + p < now {
                deadline = now;
            }
        }
    }
    let result = session.finalize(stop.unwrap_or(EndReason::Stopped));
    // Cleared before the client hears about it, so a follow-up start is
    // never refused.
    done.store(true, Ordering::SeqCst);
    match result {
        Ok(summary) => {
            tracing::info!(
                session = session.id(),
                reason = %summary.reason,
                steps = summary.recorded_steps,
                "session finished"
            );
            let _ = out.send(ServerMessage::end(&summary));
        }
        Err(e) => {
            let _ = out.send(ServerMessage::error(format!("could not close recording: {e}")));
        }
    }
}
