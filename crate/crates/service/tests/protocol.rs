mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::*;
use echoloop_core::corpus::Instrument;
use echoloop_core::session::{FeedbackRecord, HistoryRecord, SessionMode};
use echoloop_core::text_cvae::LineSource;
use echoloop_service::client::Client;
use echoloop_service::protocol::{encode_pcm, Command, DiversitySetting, Event};

#[tokio::test(flavor = "multi_thread")]
async fn handshake_then_clips_in_history_order() {
    let dir = tempfile::tempdir().unwrap();
    let (service, mut client) = start(small_models(), &test_config(dir.path(), 40.0)).await;
    let (len, _) = handshake(&mut client).await;
    assert_eq!(len, 1);
    let mut steps = Vec::new();
    for _ in 0..3 {
        let Event::NowPlaying { step, .. } = next_clip(&mut client).await else { unreachable!() };
        steps.push(step);
    }
    let history = service.shared.hub.history();
    let recorded: Vec<u64> = history.iter().map(|h| h.step).collect();
    assert_eq!(&recorded[1..4], &steps[..]);
    assert!(history.windows(2).all(|w| w[0].timestamp_ms < w[1].timestamp_ms));

    // A later connection starts from the same history.
    let mut late = Client::connect(service.tcp_addr).await.unwrap();
    let (late_len, _) = handshake(&mut late).await;
    assert!(late_len >= 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn submitted_line_is_used_verbatim_once() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models();
    let (_service, mut client) = start(models.clone(), &test_config(dir.path(), 20.0)).await;
    handshake(&mut client).await;
    let vocab = models.text.vocab();
    let text = format!("{} {} {}", vocab.token(4), vocab.token(6), vocab.token(8));
    let (reply, mut seen) = client.request(Command::SubmitLine { text: text.clone() }, WAIT).await.unwrap();
    assert_eq!(reply, Ok(()));
    // The user line may already have been emitted before the ack arrived.
    let mut lines: Vec<(String, LineSource)> = Vec::new();
    while lines.iter().filter(|l| l.1 == LineSource::User).count() == 0 || lines.last().unwrap().1 == LineSource::User {
        if seen.is_empty() {
            seen.push(next_line(&mut client).await);
        }
        if let Event::LyricLine { text, source, .. } = seen.remove(0) {
            lines.push((text, source));
        }
    }
    let users: Vec<_> = lines.iter().filter(|l| l.1 == LineSource::User).collect();
    assert_eq!(users.len(), 1);
    assert_eq!(users[0].0, text);
    assert_eq!(lines.last().unwrap().1, LineSource::Generated);

    let (reply, _) = client.request(Command::SubmitLine { text: "qqzx wwvy".into() }, WAIT).await.unwrap();
    assert!(reply.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn instrument_toggle_filters_now_playing() {
    let dir = tempfile::tempdir().unwrap();
    let (_service, mut client) = start(small_models(), &test_config(dir.path(), 40.0)).await;
    handshake(&mut client).await;
    let off = Command::ToggleInstrument {
        instrument: Instrument::Drone,
        on: false,
    };
    assert_eq!(client.request(off, WAIT).await.unwrap().0, Ok(()));
    for _ in 0..5 {
        let Event::NowPlaying { instruments, .. } = next_clip(&mut client).await else { unreachable!() };
        assert!(!instruments.contains(&Instrument::Drone));
    }
    let on = Command::ToggleInstrument {
        instrument: Instrument::Drone,
        on: true,
    };
    assert_eq!(client.request(on, WAIT).await.unwrap().0, Ok(()));
}

#[tokio::test(flavor = "multi_thread")]
async fn every_command_gets_exactly_one_reply() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models();
    let (service, mut client) = start(models.clone(), &test_config(dir.path(), 10.0)).await;
    let (_, playing) = handshake(&mut client).await;
    let clip = models.manifest[2].clip_id.clone();
    let commands = vec![
        (Command::SetMode { mode: SessionMode::Live }, true),
        (Command::SetMode { mode: SessionMode::Autonomous }, true),
        (Command::SetDiversity { mode: DiversitySetting::Manual, k: Some(3) }, true),
        (Command::SetDiversity { mode: DiversitySetting::Manual, k: None }, false),
        (Command::SetDiversity { mode: DiversitySetting::Manual, k: Some(99) }, false),
        (Command::SetDiversity { mode: DiversitySetting::Auto, k: None }, true),
        (Command::ToggleInstrument { instrument: Instrument::Keyboard, on: false }, true),
        (Command::ToggleInstrument { instrument: Instrument::Keyboard, on: true }, true),
        (Command::PinClip { clip_id: Some(clip.clone()) }, true),
        (Command::PinClip { clip_id: Some("no_such_clip".into()) }, false),
        (Command::PinClip { clip_id: None }, true),
        (Command::SubmitLine { text: models.text.vocab().token(5).into() }, true),
        (Command::SelectPastClip { clip_id: playing.clone() }, true),
        (Command::SelectPastClip { clip_id: "no_such_clip".into() }, false),
        (Command::LikeLine { line_id: 999_999 }, false),
        (Command::LiveAudioChunk { seq: 0, sample_rate: 22050, pcm: encode_pcm(&[0.0; 64]) }, false),
    ];
    let mut expected = BTreeMap::new();
    for (command, ok) in commands {
        expected.insert(client.send(command).await.unwrap(), ok);
    }
    let mut replies: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    client
        .collect_until(WAIT, |e| {
            match e {
                Event::Ack { request_id } => replies.entry(request_id.clone()).or_default().push(true),
                Event::Error { request_id: Some(id), .. } => replies.entry(id.clone()).or_default().push(false),
                _ => {}
            }
            replies.len() == expected.len()
        })
        .await
        .unwrap();
    // Nothing further for these ids.
    let deadline = tokio::time::Instant::now() + Duration::from_millis(1500);
    loop {
        let left = deadline.saturating_duration_since(tokio::time::Instant::now());
        match client.next_event(left).await {
            Ok(Event::Ack { request_id }) | Ok(Event::Error { request_id: Some(request_id), .. }) => {
                panic!("second reply for {request_id}")
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    for (id, ok) in &expected {
        assert_eq!(replies.get(id), Some(&vec![*ok]), "request {id}");
    }
    drop(service);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frames_keep_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let (_service, mut client) = start(small_models(), &test_config(dir.path(), 1.0)).await;
    handshake(&mut client).await;

    client.send_raw(b"{not json".to_vec()).await.unwrap();
    let ev = client.collect_until(WAIT, |e| matches!(e, Event::Error { .. })).await.unwrap();
    assert!(matches!(ev.last(), Some(Event::Error { request_id: None, .. })));

    client
        .send_raw(br#"{"request_id":"x1","kind":"dance","tempo":3}"#.to_vec())
        .await
        .unwrap();
    let ev = client.collect_until(WAIT, |e| matches!(e, Event::Error { .. })).await.unwrap();
    match ev.last() {
        Some(Event::Error { request_id, text }) => {
            assert_eq!(request_id.as_deref(), Some("x1"));
            assert!(text.contains("dance"), "{text}");
        }
        other => panic!("{other:?}"),
    }

    client
        .send_raw(br#"{"request_id":"x2","kind":"like_line"}"#.to_vec())
        .await
        .unwrap();
    let ev = client.collect_until(WAIT, |e| matches!(e, Event::Error { .. })).await.unwrap();
    assert!(matches!(ev.last(), Some(Event::Error { request_id: Some(id), .. }) if id == "x2"));

    let (reply, _) = client
        .request(Command::SetDiversity { mode: DiversitySetting::Auto, k: None }, WAIT)
        .await
        .unwrap();
    assert_eq!(reply, Ok(()));
}

#[tokio::test(flavor = "multi_thread")]
async fn liked_lines_are_logged_before_the_ack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = test_config(dir.path(), 20.0);
    let (_service, mut client) = start(small_models(), &cfg).await;
    handshake(&mut client).await;
    let Event::LyricLine { line_id, text, conditioning_clip_id, .. } = next_line(&mut client).await else { unreachable!() };
    let (reply, _) = client.request(Command::LikeLine { line_id }, WAIT).await.unwrap();
    assert_eq!(reply, Ok(()));
    let log = std::fs::read_to_string(&cfg.feedback_log).unwrap();
    let records: Vec<FeedbackRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].line_id, line_id);
    assert_eq!(records[0].line, text);
    assert_eq!(records[0].conditioning_clip_id, conditioning_clip_id);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_chunks_condition_the_next_step() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models();
    let (_service, mut client) = start(models.clone(), &test_config(dir.path(), 20.0)).await;
    handshake(&mut client).await;
    let clip = &models.manifest[0];
    let samples = models.recordings.slice(&clip.recording_id, clip.offset_s, 10.0).unwrap();
    let chunk = |seq| Command::LiveAudioChunk {
        seq,
        sample_rate: models.recordings.sample_rate(),
        pcm: encode_pcm(samples),
    };

    let (reply, _) = client.request(chunk(1), WAIT).await.unwrap();
    assert!(reply.unwrap_err().contains("live"));
    let (reply, _) = client.request(Command::SetMode { mode: SessionMode::Live }, WAIT).await.unwrap();
    assert_eq!(reply, Ok(()));
    let (reply, _) = client.request(chunk(2), WAIT).await.unwrap();
    assert_eq!(reply, Ok(()));
    let (reply, _) = client.request(chunk(2), WAIT).await.unwrap();
    assert!(reply.unwrap_err().contains("seq"));
    let bad = Command::LiveAudioChunk {
        seq: 3,
        sample_rate: 22050,
        pcm: "***".into(),
    };
    assert!(client.request(bad, WAIT).await.unwrap().0.is_err());

    // Live-conditioned steps carry no conditioning clip.
    for _ in 0..3 {
        if let Event::LyricLine { conditioning_clip_id: None, .. } = next_line(&mut client).await {
            return;
        }
    }
    panic!("no live-conditioned line");
}

#[tokio::test(flavor = "multi_thread")]
async fn pin_and_select_steer_conditioning() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models();
    let (service, mut client) = start(models.clone(), &test_config(dir.path(), 20.0)).await;
    handshake(&mut client).await;
    let pinned = models.manifest[7].clip_id.clone();
    let (reply, _) = client.request(Command::PinClip { clip_id: Some(pinned.clone()) }, WAIT).await.unwrap();
    assert_eq!(reply, Ok(()));
    // at most one line was computed before the pin took effect
    let mut conds = Vec::new();
    for _ in 0..4 {
        let Event::LyricLine { conditioning_clip_id, .. } = next_line(&mut client).await else { unreachable!() };
        conds.push(conditioning_clip_id);
    }
    assert!(conds[1..].iter().all(|c| c.as_deref() == Some(pinned.as_str())), "{conds:?}");

    assert_eq!(client.request(Command::PinClip { clip_id: None }, WAIT).await.unwrap().0, Ok(()));
    let history: Vec<HistoryRecord> = service.shared.hub.history();
    let past = history[0].clip_id.clone();
    assert_eq!(client.request(Command::SelectPastClip { clip_id: past.clone() }, WAIT).await.unwrap().0, Ok(()));
    let mut found = false;
    for _ in 0..2 {
        let Event::LyricLine { conditioning_clip_id, .. } = next_line(&mut client).await else { unreachable!() };
        found |= conditioning_clip_id.as_deref() == Some(past.as_str());
    }
    assert!(found);
}

#[tokio::test(flavor = "multi_thread")]
async fn all_connections_see_the_same_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (service, mut a) = start(small_models(), &test_config(dir.path(), 40.0)).await;
    let mut b = Client::connect(service.tcp_addr).await.unwrap();
    handshake(&mut a).await;
    handshake(&mut b).await;
    let (ea, eb) = (next_clip(&mut a).await, next_clip(&mut b).await);
    // b may have joined one clip late
    let (Event::NowPlaying { step: sa, .. }, Event::NowPlaying { step: sb, .. }) = (&ea, &eb) else { unreachable!() };
    let target = (*sa).max(*sb) + 1;
    assert_eq!(clip_at(&mut a, target).await, clip_at(&mut b, target).await);
}

async fn clip_at(client: &mut Client, step: u64) -> (u64, String) {
    loop {
        if let Event::NowPlaying { step: s, clip_id, .. } = next_clip(client).await {
            if s >= step {
                return (s, clip_id);
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn http_catalogue_audio_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models();
    let (service, mut client) = start(models.clone(), &test_config(dir.path(), 40.0)).await;
    handshake(&mut client).await;
    next_clip(&mut client).await;
    let base = format!("http://{}", service.http_addr);
    let http = reqwest::Client::new();

    let body = http.get(format!("{base}/catalogue")).send().await.unwrap().bytes().await.unwrap();
    let catalogue: Vec<serde_json::Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(catalogue.len(), models.manifest.len());
    assert_eq!(catalogue[0]["clip_id"], models.manifest[0].clip_id);

    let id = &models.manifest[1].clip_id;
    let full = http.get(format!("{base}/clips/{id}/audio?duration=2")).send().await.unwrap();
    assert_eq!(full.status(), 200);
    assert_eq!(full.headers()["content-type"], "audio/wav");
    let bytes = full.bytes().await.unwrap();
    assert_eq!(&bytes[..4], b"RIFF");
    std::fs::write(dir.path().join("clip.wav"), &bytes).unwrap();
    let (samples, sr) = echoloop_core::corpus::read_wav(dir.path().join("clip.wav")).unwrap();
    assert_eq!(samples.len(), 2 * sr as usize);

    let part = http
        .get(format!("{base}/clips/{id}/audio?duration=2"))
        .header("Range", "bytes=10-109")
        .send()
        .await
        .unwrap();
    assert_eq!(part.status(), 206);
    assert_eq!(part.headers()["content-range"], format!("bytes 10-109/{}", bytes.len()));
    assert_eq!(part.bytes().await.unwrap(), bytes.slice(10..110));

    let past_end = http
        .get(format!("{base}/clips/{id}/audio?duration=2"))
        .header("Range", format!("bytes={}-", bytes.len()))
        .send()
        .await
        .unwrap();
    assert_eq!(past_end.status(), 416);
    let missing = http.get(format!("{base}/clips/nope/audio")).send().await.unwrap();
    assert_eq!(missing.status(), 404);

    let body = http.get(format!("{base}/history")).send().await.unwrap().bytes().await.unwrap();
    let history: Vec<HistoryRecord> = serde_json::from_slice(&body).unwrap();
    assert!(history.len() >= 2);
    assert_eq!(history[0].step, 0);
}
