#![allow(dead_code)]

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use topsteer_server::{router, ServerConfig, ServerStats};

pub type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub const TIMEOUT: Duration = Duration::from_secs(60);

pub async fn spawn_server(config: ServerConfig) -> (String, ServerStats) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (app, stats) = router(config);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("ws://{addr}/session"), stats)
}

pub async fn connect(url: &str) -> Client {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

pub enum Incoming {
    Json(Value),
    Frame(Vec<u8>),
}

pub async fn recv(ws: &mut Client) -> Incoming {
    loop {
        let msg = tokio::time::timeout(TIMEOUT, ws.next()).await.expect("server went quiet").unwrap().unwrap();
        match msg {
            Message::Text(t) => return Incoming::Json(serde_json::from_str(t.as_str()).unwrap()),
            Message::Binary(b) => return Incoming::Frame(b.to_vec()),
            _ => continue,
        }
    }
}

/// Next JSON message that is not a status update.
pub async fn reply(ws: &mut Client) -> Value {
    loop {
        if let Incoming::Json(v) = recv(ws).await {
            if v["type"] != "status" {
                return v;
            }
        }
    }
}

pub async fn send(ws: &mut Client, msg: &str) {
    ws.send(Message::Text(msg.into())).await.unwrap();
}

pub async fn request(ws: &mut Client, msg: &str) -> Value {
    send(ws, msg).await;
    reply(ws).await
}

/// Sends `get_snapshot` and returns the JSON snapshot and its frame.
pub async fn snapshot(ws: &mut Client) -> (Value, Vec<u8>) {
    let ack = request(ws, r#"{"type":"get_snapshot"}"#).await;
    assert_eq!(ack["type"], "ack");
    let snap = reply(ws).await;
    assert_eq!(snap["type"], "snapshot");
    loop {
        if let Incoming::Frame(f) = recv(ws).await {
            return (snap, f);
        }
    }
}

/// Collects streamed statuses and frames until a status reports `phase`.
///
/// A terminal status carries a frame only when its iteration advanced, which
/// depends on coalescing. The server writes a status and its frame back to
/// back, so a frame that arrives before the ack of a follow-up `get_snapshot`
/// belongs to the terminal status.
pub async fn stream_until(ws: &mut Client, phase: &str) -> (Vec<Value>, Vec<Vec<u8>>) {
    let (mut statuses, mut frames) = (Vec::new(), Vec::new());
    loop {
        match recv(ws).await {
            Incoming::Json(v) if v["type"] == "status" => {
                let done = v["phase"] == phase;
                statuses.push(v);
                if done {
                    break;
                }
            }
            Incoming::Json(v) => panic!("unexpected message {v}"),
            Incoming::Frame(f) => frames.push(f),
        }
    }
    send(ws, r#"{"type":"get_snapshot"}"#).await;
    loop {
        match recv(ws).await {
            Incoming::Frame(f) => frames.push(f),
            Incoming::Json(v) if v["type"] == "ack" => break,
            Incoming::Json(v) => panic!("unexpected message {v}"),
        }
    }
    assert_eq!(reply(ws).await["type"], "snapshot");
    assert!(matches!(recv(ws).await, Incoming::Frame(_)));
    (statuses, frames)
}

/// Polls snapshots until the session reports `phase`.
pub async fn wait_phase(ws: &mut Client, phase: &str) -> Value {
    let deadline = tokio::time::Instant::now() + TIMEOUT;
    loop {
        let (snap, _) = snapshot(ws).await;
        if snap["phase"] == phase {
            return snap;
        }
        assert!(tokio::time::Instant::now() < deadline, "never reached {phase}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}
