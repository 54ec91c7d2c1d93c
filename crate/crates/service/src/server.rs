use std::net::SocketAddr;
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;

use echoloop_core::corpus::AudioClip;
use echoloop_core::session::{FeedbackLog, FeedbackRecord, Session, SessionModels};
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, oneshot};
use tokio_util::codec::Framed;
use tokio_util::bytes::Bytes;

use crate::config::ServiceConfig;
use crate::engine::{Engine, LoopInput};
use crate::hub::Hub;
use crate::protocol::{codec, decode_pcm, parse_command, Command, CommandMessage, Event, EventMessage};
use crate::{http, ServiceError};

/// State shared by every connection and the HTTP routes.
pub struct Shared {
    pub models: Arc<SessionModels>,
    pub hub: Arc<Hub>,
    pub inbox: Mutex<mpsc::Sender<LoopInput>>,
    pub feedback: Mutex<FeedbackLog>,
}

pub struct ServiceHandle {
    pub tcp_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub shared: Arc<Shared>,
    engine: Option<JoinHandle<()>>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.shared.inbox.lock().unwrap().send(LoopInput::Stop);
        for t in self.tasks.drain(..) {
            t.abort();
        }
        if let Some(h) = self.engine.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Loads the trained artifacts named by `cfg` and starts serving them.
pub async fn serve(cfg: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    cfg.validate()?;
    let paths = cfg.artifact_paths()?;
    let models = SessionModels::load(&paths, cfg.spectro.clone())?;
    serve_models(Arc::new(models), cfg).await
}

pub async fn serve_models(models: Arc<SessionModels>, cfg: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    cfg.validate()?;
    let session = Session::new(Arc::clone(&models), cfg.session.clone())?;
    let feedback = FeedbackLog::open(&cfg.feedback_log)?;
    let tcp = TcpListener::bind(&cfg.tcp_addr).await?;
    let http_listener = TcpListener::bind(&cfg.http_addr).await?;
    let (tx, rx) = mpsc::channel();
    let hub = Arc::new(Hub::new());
    let shared = Arc::new(Shared {
        models,
        hub: Arc::clone(&hub),
        inbox: Mutex::new(tx),
        feedback: Mutex::new(feedback),
    });
    let engine = Engine::new(session, hub, rx, cfg.playback_speed, cfg.compute_lead_s);
    let engine = std::thread::Builder::new()
        .name("echoloop-session".into())
        .spawn(move || engine.run())?;
    let tcp_addr = tcp.local_addr()?;
    let http_addr = http_listener.local_addr()?;
    let accept_shared = Arc::clone(&shared);
    let accept = tokio::spawn(async move {
        loop {
            match tcp.accept().await {
                Ok((stream, peer)) => {
                    let shared = Arc::clone(&accept_shared);
                    tokio::spawn(async move {
                        if let Err(e) = connection(stream, shared).await {
                            log::info!("connection {peer} ended: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    let router = http::router(Arc::clone(&shared));
    let http_task = tokio::spawn(async move {
        if let Err(e) = axum::serve(http_listener, router).await {
            log::error!("http server stopped: {e}");
        }
    });
    log::info!("serving commands on {tcp_addr}, http on {http_addr}");
    Ok(ServiceHandle {
        tcp_addr,
        http_addr,
        shared,
        engine: Some(engine),
        tasks: vec![accept, http_task],
    })
}

struct Outbox {
    framed: Framed<TcpStream, tokio_util::codec::LengthDelimitedCodec>,
    seq: u64,
}

impl Outbox {
    async fn send(&mut self, event: Event) -> Result<(), ServiceError> {
        let msg = EventMessage { seq: self.seq, event };
        self.seq += 1;
        self.framed.send(Bytes::from(serde_json::to_vec(&msg)?)).await?;
        Ok(())
    }
}

async fn connection(stream: TcpStream, shared: Arc<Shared>) -> Result<(), ServiceError> {
    let (history, now_playing, mut events) = shared.hub.subscribe();
    let mut out = Outbox {
        framed: Framed::new(stream, codec()),
        seq: 0,
    };
    out.send(Event::HistorySnapshot { history }).await?;
    if let Some(np) = now_playing {
        out.send(np).await?;
    }
    let mut last_live_seq: Option<u64> = None;
    loop {
        tokio::select! {
            frame = out.framed.next() => {
                let Some(frame) = frame else { return Ok(()) };
                let reply = match parse_command(&frame?) {
                    Ok(msg) => {
                        let id = msg.request_id.clone();
                        let result = execute(msg, &shared, &mut last_live_seq).await;
                        // Events published before the command took effect go out ahead of its reply.
                        loop {
                            match events.try_recv() {
                                Ok(ev) => out.send(ev).await?,
                                Err(broadcast::error::TryRecvError::Lagged(n)) => out.send(lagged(n)).await?,
                                Err(_) => break,
                            }
                        }
                        match result {
                            Ok(()) => Event::Ack { request_id: id },
                            Err(text) => Event::Error { text, request_id: Some(id) },
                        }
                    }
                    Err((request_id, text)) => Event::Error { text, request_id },
                };
                out.send(reply).await?;
            }
            event = events.recv() => match event {
                Ok(ev) => out.send(ev).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => out.send(lagged(n)).await?,
                Err(broadcast::error::RecvError::Closed) => return Ok(()),
            },
        }
    }
}

fn lagged(n: u64) -> Event {
    Event::Error {
        text: format!("connection lagged; {n} events dropped"),
        request_id: None,
    }
}

async fn to_loop(shared: &Shared, make: impl FnOnce(oneshot::Sender<Result<(), String>>) -> LoopInput) -> Result<(), String> {
    let (tx, rx) = oneshot::channel();
    shared
        .inbox
        .lock()
        .unwrap()
        .send(make(tx))
        .map_err(|_| "session loop is not running".to_string())?;
    rx.await.map_err(|_| "session loop is not running".to_string())?
}

async fn execute(msg: CommandMessage, shared: &Shared, last_live_seq: &mut Option<u64>) -> Result<(), String> {
    match msg.command {
        Command::LikeLine { line_id } => {
            let record = shared.hub.find_line(line_id).ok_or_else(|| format!("no line {line_id} in history"))?;
            let entry = FeedbackRecord::from_history(&record).ok_or("history record has no line")?;
            shared.feedback.lock().unwrap().append(&entry).map_err(|e| e.to_string())
        }
        Command::LiveAudioChunk { seq, sample_rate, pcm } => {
            if last_live_seq.is_some_and(|last| seq <= last) {
                return Err(format!("live chunk seq {seq} does not follow {}", last_live_seq.unwrap()));
            }
            let samples = decode_pcm(&pcm)?;
            *last_live_seq = Some(seq);
            let clip = AudioClip::new(samples, sample_rate, "live", 0.0);
            to_loop(shared, |reply| LoopInput::Live { clip, reply }).await
        }
        Command::SelectPastClip { ref clip_id } if !shared.hub.played(clip_id) => Err(format!("{clip_id} has not played in this session")),
        command => to_loop(shared, |reply| LoopInput::Command { command, reply }).await,
    }
}
