//! The loop thread: owns the session, steps it one clip ahead of playback,
//! and applies commands while it waits.

use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use echoloop_core::corpus::AudioClip;
use echoloop_core::retrieval::InstrumentMask;
use echoloop_core::session::{HistoryRecord, Session, StepOutput};
use tokio::sync::oneshot;

use crate::hub::Hub;
use crate::protocol::{Command, DiversitySetting, Event};

pub enum LoopInput {
    Command {
        command: Command,
        reply: oneshot::Sender<Result<(), String>>,
    },
    Live {
        clip: AudioClip,
        reply: oneshot::Sender<Result<(), String>>,
    },
    Stop,
}

pub struct Engine {
    session: Session,
    hub: Arc<Hub>,
    inbox: Receiver<LoopInput>,
    speed: f64,
    lead_s: f64,
    stopped: bool,
}

fn wall(stream_s: f64, speed: f64) -> Duration {
    Duration::from_secs_f64((stream_s / speed).max(0.0))
}

fn violates(mask: &InstrumentMask, out: &StepOutput) -> bool {
    !mask.allows(&out.clip.instrument_tags)
}

impl Engine {
    pub fn new(session: Session, hub: Arc<Hub>, inbox: Receiver<LoopInput>, speed: f64, lead_s: f64) -> Self {
        Self {
            session,
            hub,
            inbox,
            speed,
            lead_s,
            stopped: false,
        }
    }

    fn apply(&mut self, command: Command) -> Result<(), String> {
        let s = &mut self.session;
        let r = match command {
            Command::SetMode { mode } => {
                s.set_mode(mode);
                Ok(())
            }
            Command::SetDiversity { mode: DiversitySetting::Auto, .. } => {
                s.set_auto_k();
                Ok(())
            }
            Command::SetDiversity {
                mode: DiversitySetting::Manual,
                k,
            } => match k {
                Some(k) => s.set_manual_k(k),
                None => return Err("manual diversity needs k".into()),
            },
            Command::ToggleInstrument { instrument, on } => {
                s.set_instrument(instrument, on);
                Ok(())
            }
            Command::PinClip { clip_id } => s.pin(clip_id.as_deref()),
            Command::SubmitLine { text } => s.submit_line(&text),
            Command::SelectPastClip { clip_id } => s.select_clip(&clip_id),
            Command::LikeLine { .. } | Command::LiveAudioChunk { .. } => {
                return Err("handled by the connection, not the loop".into())
            }
        };
        r.map_err(|e| e.to_string())
    }

    fn handle(&mut self, input: LoopInput) {
        match input {
            LoopInput::Command { command, reply } => {
                let _ = reply.send(self.apply(command));
            }
            LoopInput::Live { clip, reply } => {
                let _ = reply.send(self.session.ingest_live_clip(&clip).map(drop).map_err(|e| e.to_string()));
            }
            LoopInput::Stop => self.stopped = true,
        }
    }

    /// Applies inputs until `deadline`.
    fn wait_until(&mut self, deadline: Instant) {
        while !self.stopped {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                // Drain anything already queued before moving on.
                while let Ok(input) = self.inbox.try_recv() {
                    self.handle(input);
                }
                return;
            }
            match self.inbox.recv_timeout(left) {
                Ok(input) => self.handle(input),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => self.stopped = true,
            }
        }
    }

    fn publish_clip(&self, record: &HistoryRecord) {
        let tags = self
            .session
            .models()
            .clip(&record.clip_id)
            .map(|c| c.instrument_tags.clone())
            .unwrap_or_default();
        self.hub.publish(Event::now_playing(record, tags), Some(record.clone()));
    }

    /// Steps, retrying while the step fails; errors become events.
    fn compute(&mut self) -> Option<StepOutput> {
        let retry = wall(1.0, self.speed).min(Duration::from_millis(250));
        while !self.stopped {
            match self.session.step() {
                Ok(out) => {
                    let record = self.session.history().last().expect("step records history");
                    self.hub.publish(
                        Event::LyricLine {
                            line_id: out.line_id,
                            text: out.line.text.clone(),
                            ts: record.timestamp_ms,
                            source: out.line.source,
                            conditioning_clip_id: record.conditioning_clip_id.clone(),
                        },
                        Some(record.clone()),
                    );
                    return Some(out);
                }
                Err(e) => {
                    log::warn!("step failed: {e}");
                    self.hub.publish(
                        Event::Error {
                            text: format!("step failed, current clip continues: {e}"),
                            request_id: None,
                        },
                        None,
                    );
                    self.wait_until(Instant::now() + retry);
                }
            }
        }
        None
    }

    pub fn run(mut self) {
        let first = self.session.history()[0].clone();
        self.publish_clip(&first);
        let mut playing = first.schedule;
        let mut started = Instant::now();
        while !self.stopped {
            let boundary = started + wall(playing.duration_s - playing.crossfade_out_s, self.speed);
            self.wait_until(boundary.checked_sub(wall(self.lead_s, self.speed)).unwrap_or(boundary));
            let Some(mut next) = self.compute() else { break };
            self.wait_until(boundary);
            // A mask change after the step was computed must still be honoured.
            while !self.stopped && violates(self.session.mask(), &next) {
                match self.compute() {
                    Some(out) => next = out,
                    None => break,
                }
            }
            if self.stopped {
                break;
            }
            let record = self.session.history().last().unwrap().clone();
            self.publish_clip(&record);
            playing = next.schedule;
            started = boundary.max(Instant::now());
        }
    }
}
