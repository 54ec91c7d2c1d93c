#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use echoloop_core::corpus::SyntheticCorpusSpec;
use echoloop_core::latent_gan::GanTrainConfig;
use echoloop_core::pipeline::{run, PipelineConfig};
use echoloop_core::session::{SessionConfig, SessionModels};
use echoloop_core::spec_vae::SpecVaeTrainConfig;
use echoloop_core::text_cvae::TextTrainConfig;
use echoloop_service::client::Client;
use echoloop_service::config::ServiceConfig;
use echoloop_service::protocol::Event;
use echoloop_service::server::{serve_models, ServiceHandle};

pub const WAIT: Duration = Duration::from_secs(30);

pub fn small_models() -> Arc<SessionModels> {
    static MODELS: OnceLock<Arc<SessionModels>> = OnceLock::new();
    MODELS
        .get_or_init(|| {
            let cfg = PipelineConfig {
                corpus: SyntheticCorpusSpec {
                    drone: 2,
                    percussion: 2,
                    keyboard: 2,
                    clips_per_composition: 6,
                    ..Default::default()
                },
                spec_train: SpecVaeTrainConfig {
                    epochs: 2,
                    lr: 1e-3,
                    ..Default::default()
                },
                text_train: TextTrainConfig {
                    epochs: 2,
                    batch_size: 8,
                    ..Default::default()
                },
                gan_train: GanTrainConfig {
                    epochs: 2,
                    ..Default::default()
                },
                ..Default::default()
            };
            Arc::new(run(&cfg).unwrap().models())
        })
        .clone()
}

/// Ephemeral ports, fast playback and a feedback log under `dir`.
pub fn test_config(dir: &Path, speed: f64) -> ServiceConfig {
    ServiceConfig {
        tcp_addr: "127.0.0.1:0".into(),
        http_addr: "127.0.0.1:0".into(),
        feedback_log: dir.join("feedback.jsonl"),
        playback_speed: speed,
        session: SessionConfig {
            seed: 3,
            candidates: 20,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub async fn start(models: Arc<SessionModels>, cfg: &ServiceConfig) -> (ServiceHandle, Client) {
    let handle = serve_models(models, cfg).await.unwrap();
    let client = Client::connect(handle.tcp_addr).await.unwrap();
    (handle, client)
}

/// Reads through the handshake: history snapshot, then the current clip.
pub async fn handshake(client: &mut Client) -> (usize, String) {
    let first = client.next_event(WAIT).await.unwrap();
    let Event::HistorySnapshot { history } = first else {
        panic!("expected history_snapshot first, got {first:?}");
    };
    let second = client.next_event(WAIT).await.unwrap();
    let Event::NowPlaying { clip_id, .. } = second else {
        panic!("expected now_playing second, got {second:?}");
    };
    assert_eq!(history.last().map(|h| h.clip_id.as_str()), Some(clip_id.as_str()));
    (history.len(), clip_id)
}

pub async fn next_line(client: &mut Client) -> Event {
    client
        .collect_until(WAIT, |e| matches!(e, Event::LyricLine { .. }))
        .await
        .unwrap()
        .pop()
        .unwrap()
}

pub async fn next_clip(client: &mut Client) -> Event {
    client
        .collect_until(WAIT, |e| matches!(e, Event::NowPlaying { .. }))
        .await
        .unwrap()
        .pop()
        .unwrap()
}
