//! WebSocket endpoint: one optimization session per connection.
//!
//! Clients send JSON control messages on `/session`; the server replies to
//! each with an ack or an error and streams a JSON status message followed by
//! a binary density frame after every iteration. Slow clients only ever see
//! the latest snapshot (intermediate ones are coalesced away).

pub mod protocol;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;

use topsteer_core::config::Problem;
use topsteer_core::mesh::DomainSpec;
use topsteer_core::session::{Ack, MutationCommand, Observer, Phase, Session, SessionError, Snapshot};

use protocol::{Control, ProtocolError};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Problem every new session starts from.
    pub initial: Problem,
    /// How long a session outlives its connection before it is stopped.
    pub grace: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { initial: Problem::new(DomainSpec::new(2.0, 1.0, 1.0), 0.1), grace: Duration::from_secs(60) }
    }
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServerConfig>,
    live: Arc<AtomicUsize>,
}

/// Handle for observing a running server.
#[derive(Clone)]
pub struct ServerStats {
    live: Arc<AtomicUsize>,
}

impl ServerStats {
    /// Sessions not yet discarded, including those in their grace period.
    pub fn live_sessions(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }
}

pub fn router(config: ServerConfig) -> (Router, ServerStats) {
    let live = Arc::new(AtomicUsize::new(0));
    let state = AppState { config: Arc::new(config), live: live.clone() };
    let app = Router::new().route("/session", get(upgrade)).with_state(state);
    (app, ServerStats { live })
}

pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    let (app, _) = router(config);
    axum::serve(listener, app).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let (tx, mut rx) = watch::channel::<Option<Arc<Snapshot>>>(None);
    let observer: Observer = Arc::new(move |snap: &Arc<Snapshot>| {
        tx.send_replace(Some(snap.clone()));
    });
    let session = match Session::with_observer(state.config.initial.clone(), observer) {
        Ok(s) => s,
        Err(e) => {
            log::error!("cannot create session: {e}");
            let _ = socket.send(Message::Text(ProtocolError::new("bad_value", e.to_string()).to_json().into())).await;
            return;
        }
    };
    state.live.fetch_add(1, Ordering::SeqCst);
    let session = Arc::new(session);
    let mut stream = StreamState::default();

    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        let err = ProtocolError::new("parse_error", "binary control messages are not supported");
                        if socket.send(Message::Text(err.to_json().into())).await.is_err() { break; }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let session2 = session.clone();
                let replies = tokio::task::spawn_blocking(move || handle(&session2, text.as_str()))
                    .await
                    .unwrap_or_else(|e| vec![Message::Text(ProtocolError::new("parse_error", e.to_string()).to_json().into())]);
                let mut failed = false;
                for reply in replies {
                    if socket.send(reply).await.is_err() { failed = true; break; }
                }
                if failed { break; }
            }
            changed = rx.changed() => {
                if changed.is_err() { break; }
                let snap = rx.borrow_and_update().clone();
                if let Some(snap) = snap {
                    if let Some(msgs) = stream.next(&snap) {
                        let mut failed = false;
                        for m in msgs {
                            if socket.send(m).await.is_err() { failed = true; break; }
                        }
                        if failed { break; }
                    }
                }
            }
        }
    }

    log::info!("connection closed; session discarded in {:?}", state.config.grace);
    let grace = state.config.grace;
    let live = state.live.clone();
    tokio::spawn(async move {
        tokio::time::sleep(grace).await;
        let _ = tokio::task::spawn_blocking(move || drop(session)).await;
        live.fetch_sub(1, Ordering::SeqCst);
    });
}

/// Tracks what the client has already been sent.
#[derive(Default)]
struct StreamState {
    last: Option<(u32, Phase)>,
    delivered: u32,
}

impl StreamState {
    fn next(&mut self, snap: &Snapshot) -> Option<Vec<Message>> {
        let key = (snap.iter, snap.phase);
        let idle_start = snap.phase == Phase::Configuring && self.last.is_none();
        let run_start = snap.phase == Phase::Running && snap.iter == 0;
        if self.last == Some(key) || idle_start || run_start {
            return None;
        }
        let same_iter = self.last.is_some_and(|(k, _)| k == snap.iter);
        if snap.iter < self.delivered {
            self.delivered = 0;
        }
        let mut out = vec![Message::Text(protocol::status(snap, self.delivered).into())];
        if !same_iter {
            out.push(Message::Binary(snap.frame.encode().into()));
        }
        self.delivered = snap.iter;
        self.last = Some(key);
        Some(out)
    }
}

fn ack(a: Ack) -> Vec<Message> {
    vec![Message::Text(protocol::ack(a.applies_at).into())]
}

fn handle(session: &Session, text: &str) -> Vec<Message> {
    match dispatch(session, text) {
        Ok(msgs) => msgs,
        Err(e) => vec![Message::Text(e.to_json().into())],
    }
}

fn dispatch(session: &Session, text: &str) -> Result<Vec<Message>, ProtocolError> {
    let control = protocol::parse_control(text)?;
    let reply = match control {
        Control::SetDomain(d) => {
            let domain = DomainSpec { lx: d.lx, ly: d.ly, lz: d.lz, position: d.position, yaw: d.yaw };
            session.set_domain(domain, d.elem_size)?
        }
        Control::Tap { entity } => session.submit(MutationCommand::TapEntity { entity })?,
        Control::Drag { entity, force } => session.submit(MutationCommand::DragEntity { entity, force })?,
        Control::Preset(preset) => session.submit(MutationCommand::ApplyPreset { preset })?,
        Control::SetParams(patch) => set_params(session, &patch)?,
        Control::Start => session.start()?,
        Control::Stop => session.stop()?,
        Control::Reset => session.reset()?,
        Control::GetSnapshot => {
            let snap = session.latest_snapshot();
            let mut out = ack(Ack { applies_at: 0 });
            out.push(Message::Text(protocol::snapshot(&snap).into()));
            out.push(Message::Binary(snap.frame.encode().into()));
            return Ok(out);
        }
    };
    Ok(ack(reply))
}

fn set_params(session: &Session, patch: &protocol::ParamPatch) -> Result<Ack, SessionError> {
    if session.phase() == Phase::Running {
        let mut cmds = Vec::new();
        if let Some(value) = patch.volfrac {
            cmds.push(MutationCommand::SetVolfrac { value });
        }
        if let Some(value) = patch.maxiter {
            cmds.push(MutationCommand::SetMaxIter { value });
        }
        if let Some(value) = patch.remove_voids {
            cmds.push(MutationCommand::SetRemoveVoids { value });
        }
        if let Some(value) = patch.iterative_solver {
            cmds.push(MutationCommand::SetIterativeSolver { value });
        }
        if patch.has_static_fields() {
            // validate values first so out-of-range input reports bad_value
            let base = session.latest_snapshot().params.clone();
            patch.apply(&base).validate().map_err(SessionError::BadValue)?;
            return Err(SessionError::BadPhase("only volfrac, maxiter, remove_voids and iterative_solver change mid-run".into()));
        }
        return session.submit_all(cmds);
    }
    let params = patch.apply(&session.latest_snapshot().params);
    params.validate().map_err(SessionError::BadValue)?;
    session.set_params(params)
}
