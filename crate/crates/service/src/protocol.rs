//! Length-prefixed JSON frames: a 4-byte big-endian length, then UTF-8 JSON.
//! Commands and events carry their variant in a `kind` field.

use base64::Engine;
use echoloop_core::corpus::Instrument;
use echoloop_core::session::{HistoryRecord, ScheduleEntry, SessionMode};
use echoloop_core::text_cvae::LineSource;
use serde::{Deserialize, Serialize};
use tokio_util::codec::LengthDelimitedCodec;

/// Frames up to 64 MiB; a 10 s PCM window is well under 1 MiB.
pub fn codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder().max_frame_length(64 << 20).new_codec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub request_id: String,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversitySetting {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    SetMode {
        mode: SessionMode,
    },
    SetDiversity {
        mode: DiversitySetting,
        #[serde(default)]
        k: Option<usize>,
    },
    ToggleInstrument {
        instrument: Instrument,
        on: bool,
    },
    PinClip {
        clip_id: Option<String>,
    },
    SubmitLine {
        text: String,
    },
    SelectPastClip {
        clip_id: String,
    },
    LikeLine {
        line_id: u64,
    },
    /// `pcm` is base64 of 16-bit little-endian mono samples.
    LiveAudioChunk {
        seq: u64,
        sample_rate: u32,
        pcm: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    /// Per-connection, starting at 0, increasing by one.
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    NowPlaying {
        step: u64,
        clip_id: String,
        instruments: Vec<Instrument>,
        schedule: ScheduleEntry,
    },
    LyricLine {
        line_id: u64,
        text: String,
        ts: u64,
        source: LineSource,
        conditioning_clip_id: Option<String>,
    },
    HistorySnapshot {
        history: Vec<HistoryRecord>,
    },
    Error {
        text: String,
        request_id: Option<String>,
    },
    Ack {
        request_id: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::NowPlaying { .. } => "now_playing",
            Event::LyricLine { .. } => "lyric_line",
            Event::HistorySnapshot { .. } => "history_snapshot",
            Event::Error { .. } => "error",
            Event::Ack { .. } => "ack",
        }
    }

    pub fn now_playing(record: &HistoryRecord, instruments: impl IntoIterator<Item = Instrument>) -> Self {
        Event::NowPlaying {
            step: record.step,
            clip_id: record.clip_id.clone(),
            instruments: instruments.into_iter().collect(),
            schedule: record.schedule.clone(),
        }
    }
}

/// Parses a frame, recovering the request id from malformed commands when possible.
pub fn parse_command(frame: &[u8]) -> Result<CommandMessage, (Option<String>, String)> {
    let value: serde_json::Value = serde_json::from_slice(frame).map_err(|e| (None, format!("malformed frame: {e}")))?;
    let request_id = match value.get("request_id") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
        None => None,
    };
    serde_json::from_value(value).map_err(|e| (request_id, format!("invalid command: {e}")))
}

pub fn encode_pcm(samples: &[f32]) -> String {
    let bytes: Vec<u8> = samples
        .iter()
        .flat_map(|&s| ((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16).to_le_bytes())
        .collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_pcm(pcm: &str) -> Result<Vec<f32>, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(pcm)
        .map_err(|e| format!("pcm is not base64: {e}"))?;
    if bytes.len() % 2 != 0 {
        return Err("pcm has an odd byte count".into());
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / i16::MAX as f32)
        .collect())
}
