//! Interactive websocket service. One task owns the engine and steps it in
//! real time; connection handlers forward client commands to it through a
//! queue and relay the shared state stream.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use cobotguard::sim::config::HandKind;
use cobotguard::sim::{Engine, ScenarioConfig, SimError};
use nalgebra::Vector3;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};

use crate::protocol::{clamp_to_workspace, code, error_msg, parse_client, ClientMsg, ConfigMsg, ServerMsg, StateMsg};
use crate::{load_config, CliError};

/// Path of the websocket endpoint.
pub const WS_PATH: &str = "/ws";

type Reply = oneshot::Sender<Result<(), ServerMsg>>;

struct EngineCommand {
    msg: ClientMsg,
    reply: Reply,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<EngineCommand>,
    frames: broadcast::Sender<Arc<str>>,
    config_frame: Arc<str>,
}

fn encode(msg: &ServerMsg) -> Arc<str> {
    serde_json::to_string(msg).expect("protocol messages serialize").into()
}

/// Makes the scenario hand externally steered, as the console requires.
pub fn interactive_config(mut cfg: ScenarioConfig) -> Result<ScenarioConfig, CliError> {
    let hand = cfg
        .hand
        .as_mut()
        .ok_or_else(|| CliError::usage("serve needs a scenario with a [hand] section"))?;
    hand.kind = HandKind::Interactive;
    Ok(cfg)
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
}

impl ServerHandle {
    /// Stops the engine and the listener and waits for both.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.server.await;
    }
}

fn new_engine(cfg: &ScenarioConfig) -> Result<Engine, SimError> {
    let mut engine = Engine::new(cfg.clone())?;
    engine.set_looping(true);
    engine.tick()?;
    Ok(engine)
}

async fn run_engine(
    cfg: ScenarioConfig,
    mut engine: Engine,
    stream_hz: f64,
    mut commands: mpsc::Receiver<EngineCommand>,
    frames: broadcast::Sender<Arc<str>>,
    mut shutdown: broadcast::Receiver<()>,
) {
    let mut step = interval(Duration::from_secs_f64(cfg.control_dt));
    step.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut stream = interval(Duration::from_secs_f64(1.0 / stream_hz));
    stream.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut paused = false;
    loop {
        tokio::select! {
            _ = shutdown.recv() => break,
            Some(cmd) = commands.recv() => {
                let result = match cmd.msg {
                    ClientMsg::HandMove { x, y, z } => {
                        engine.push_hand_target(Vector3::from(clamp_to_workspace([x, y, z])));
                        Ok(())
                    }
                    ClientMsg::Pause {} => {
                        paused = true;
                        Ok(())
                    }
                    ClientMsg::Resume {} => {
                        paused = false;
                        Ok(())
                    }
                    ClientMsg::Reset {} => match new_engine(&cfg) {
                        Ok(e) => {
                            engine = e;
                            Ok(())
                        }
                        Err(e) => Err(error_msg(code::ENGINE, e.to_string())),
                    },
                    ClientMsg::SetParam { name, value } => engine.set_param(&name, value).map_err(|e| match e {
                        SimError::UnknownParam(_) => error_msg(code::UNKNOWN_PARAM, e.to_string()),
                        other => error_msg(code::INVALID_VALUE, other.to_string()),
                    }),
                };
                let _ = cmd.reply.send(result);
            }
            _ = step.tick() => {
                if !paused && !engine.is_finished() {
                    if let Err(e) = engine.tick() {
                        let _ = frames.send(encode(&error_msg(code::ENGINE, e.to_string())));
                        paused = true;
                    }
                }
            }
            _ = stream.tick() => {
                if let Some(row) = engine.last_row() {
                    let _ = frames.send(encode(&ServerMsg::State(StateMsg::from_row(row, paused))));
                }
            }
        }
    }
}

async fn ws_route(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.subscribe();
    if socket.send(Message::Text(state.config_frame.to_string())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.to_string())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(Message::Binary(_))) => {
                        let err = encode(&error_msg(code::MALFORMED, "binary frames are not supported"));
                        if socket.send(Message::Text(err.to_string())).await.is_err() {
                            return;
                        }
                        continue;
                    }
                    Some(Ok(_)) => continue,
                };
                let outcome = match parse_client(&text) {
                    Err(e) => Err(e),
                    Ok(msg) => {
                        let (reply, rx) = oneshot::channel();
                        if state.commands.send(EngineCommand { msg, reply }).await.is_err() {
                            return;
                        }
                        rx.await.unwrap_or(Ok(()))
                    }
                };
                if let Err(e) = outcome {
                    if socket.send(Message::Text(encode(&e).to_string())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}

/// Starts the engine and the websocket listener on an already bound socket.
pub async fn start(listener: TcpListener, cfg: ScenarioConfig, stream_hz: f64) -> Result<ServerHandle, CliError> {
    if !(stream_hz.is_finite() && stream_hz > 0.0) {
        return Err(CliError::usage("--stream-hz must be positive"));
    }
    let cfg = interactive_config(cfg)?;
    let engine = new_engine(&cfg).map_err(CliError::from)?;
    let addr = listener.local_addr().map_err(|e| CliError::runtime(e.to_string()))?;
    let (cmd_tx, cmd_rx) = mpsc::channel(256);
    let (frames, _) = broadcast::channel(64);
    let (stop_tx, _) = broadcast::channel::<()>(1);
    let state = AppState {
        commands: cmd_tx,
        frames: frames.clone(),
        config_frame: encode(&ServerMsg::Config(ConfigMsg::new(&cfg, stream_hz))),
    };
    let engine_task = tokio::spawn(run_engine(cfg, engine, stream_hz, cmd_rx, frames, stop_tx.subscribe()));
    let app = Router::new().route(WS_PATH, get(ws_route)).with_state(state);
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let mut stop_server = stop_tx.subscribe();
    let server = tokio::spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = stop_server.recv().await;
        });
        let stopper = tokio::spawn(async move {
            let _ = shutdown_rx.await;
            let _ = stop_tx.send(());
        });
        if let Err(e) = serve.await {
            tracing::error!("server error: {e}");
        }
        stopper.abort();
        let _ = engine_task.await;
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(shutdown_tx),
        server,
    })
}

/// Entry point for `cobotguard serve`: binds, serves until Ctrl-C.
pub fn serve_blocking(config: &Path, bind: &str, stream_hz: f64, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::usage(format!("cannot bind {bind}: {e}")))?;
        let handle = start(listener, cfg, stream_hz).await?;
        println!("serving ws://{}{WS_PATH} (Ctrl-C to stop)", handle.addr);
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok(())
    })
}
