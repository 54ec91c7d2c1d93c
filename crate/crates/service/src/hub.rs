//! What the loop has published so far, and the broadcast of new events.
//! Snapshot and subscription happen under one lock, so a new connection
//! sees every event exactly once.

use std::sync::Mutex;

use echoloop_core::session::HistoryRecord;
use tokio::sync::broadcast;

use crate::protocol::Event;

#[derive(Default)]
struct Published {
    history: Vec<HistoryRecord>,
    /// Records of every emitted lyric line, including lines whose clip has not started.
    lines: Vec<HistoryRecord>,
    now_playing: Option<Event>,
}

pub struct Hub {
    state: Mutex<Published>,
    tx: broadcast::Sender<Event>,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new()
    }
}

impl Hub {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(Published::default()),
            tx: broadcast::channel(4096).0,
        }
    }

    /// Publishes `event`. A `now_playing` record extends the history; a
    /// `lyric_line` record makes the line available to `find_line`.
    pub fn publish(&self, event: Event, record: Option<HistoryRecord>) {
        let mut state = self.state.lock().unwrap();
        match (&event, record) {
            (Event::NowPlaying { .. }, Some(r)) => state.history.push(r),
            (Event::LyricLine { .. }, Some(r)) => state.lines.push(r),
            _ => {}
        }
        if matches!(event, Event::NowPlaying { .. }) {
            state.now_playing = Some(event.clone());
        }
        let _ = self.tx.send(event);
    }

    pub fn subscribe(&self) -> (Vec<HistoryRecord>, Option<Event>, broadcast::Receiver<Event>) {
        let state = self.state.lock().unwrap();
        (state.history.clone(), state.now_playing.clone(), self.tx.subscribe())
    }

    pub fn history(&self) -> Vec<HistoryRecord> {
        self.state.lock().unwrap().history.clone()
    }

    pub fn find_line(&self, line_id: u64) -> Option<HistoryRecord> {
        self.state
            .lock()
            .unwrap()
            .lines
            .iter()
            .find(|h| h.line_id == Some(line_id))
            .cloned()
    }

    pub fn played(&self, clip_id: &str) -> bool {
        self.state.lock().unwrap().history.iter().any(|h| h.clip_id == clip_id)
    }
}
