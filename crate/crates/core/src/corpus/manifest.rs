use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Drone,
    Percussion,
    Keyboard,
    Guitar,
}

impl Instrument {
    pub const ALL: [Instrument; 4] = [Self::Drone, Self::Percussion, Self::Keyboard, Self::Guitar];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Drone => "drone",
            Self::Percussion => "percussion",
            Self::Keyboard => "keyboard",
            Self::Guitar => "guitar",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Instrument {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown instrument tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub composition_id: String,
    pub instrument_tags: BTreeSet<Instrument>,
    pub recording_id: String,
    pub offset_s: f64,
    pub spectrogram_path: String,
}

/// One text line aligned with the clip it accompanies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedLine {
    pub clip_id: String,
    pub text: String,
}

/// Composition id to instrument tags.
pub type Annotations = BTreeMap<String, BTreeSet<Instrument>>;

pub fn clip_id(recording_id: &str, offset_s: f64) -> String {
    format!("{recording_id}__{:07}", (offset_s * 1000.0).round() as u64)
}

/// Inverse of [`clip_id`]: `(recording_id, offset_s)`.
pub fn parse_clip_id(id: &str) -> Option<(String, f64)> {
    let (rec, ms) = id.rsplit_once("__")?;
    if rec.is_empty() {
        return None;
    }
    let ms: u64 = ms.parse().ok()?;
    Some((rec.to_string(), ms as f64 / 1000.0))
}

/// Build a manifest from clip file names of the form `{recording}__{offset_ms}.wav`.
/// The recording id doubles as the composition id.
pub fn build_manifest<S: AsRef<str>>(
    clip_files: &[S],
    annotations: &Annotations,
    spectrogram_dir: &str,
) -> Result<Vec<ClipRecord>> {
    let mut seen = HashSet::new();
    let mut ids = HashSet::new();
    let mut records = Vec::with_capacity(clip_files.len());
    for name in clip_files {
        let name = name.as_ref();
        if !seen.insert(name.to_string()) {
            return Err(CoreError::DuplicateClip(name.to_string()));
        }
        let stem = name.strip_suffix(".wav").unwrap_or(name);
        let (recording_id, offset_s) = parse_clip_id(stem).ok_or_else(|| CoreError::Format {
            path: name.to_string(),
            detail: "clip file name must look like <recording>__<offset_ms>.wav".into(),
        })?;
        let id = clip_id(&recording_id, offset_s);
        if !ids.insert(id.clone()) {
            return Err(CoreError::DuplicateClip(id));
        }
        let tags = annotations
            .get(&recording_id)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| CoreError::MissingAnnotation(recording_id.clone()))?;
        records.push(ClipRecord {
            spectrogram_path: format!("{spectrogram_dir}/{id}.spec"),
            clip_id: id,
            composition_id: recording_id.clone(),
            instrument_tags: tags.clone(),
            recording_id,
            offset_s,
        });
    }
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(records)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CoreError::Format {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(rows)
}

/// Check manifest-level invariants: unique ids, non-empty tags, one composition per recording.
pub fn validate_manifest(records: &[ClipRecord]) -> Result<()> {
    let mut ids = HashSet::new();
    let mut composition_of: BTreeMap<&str, &str> = BTreeMap::new();
    for r in records {
        if !ids.insert(r.clip_id.as_str()) {
            return Err(CoreError::DuplicateClip(r.clip_id.clone()));
        }
        if r.instrument_tags.is_empty() {
            return Err(CoreError::MissingAnnotation(r.composition_id.clone()));
        }
        let prev = composition_of.entry(&r.recording_id).or_insert(&r.composition_id);
        if *prev != r.composition_id {
            return Err(CoreError::Config(format!(
                "recording {} maps to compositions {prev} and {}",
                r.recording_id, r.composition_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(list: &[Instrument]) -> BTreeSet<Instrument> {
        list.iter().copied().collect()
    }

    #[test]
    fn three_recordings_ten_clips() {
        let mut files = Vec::new();
        let mut ann = Annotations::new();
        for r in ["a", "b", "c"] {
            ann.insert(r.into(), tags(&[Instrument::Drone]));
            for k in 0..10 {
                files.push(format!("{}.wav", clip_id(r, k as f64 * 10.0)));
            }
        }
        let m = build_manifest(&files, &ann, "spec").unwrap();
        assert_eq!(m.len(), 30);
        let comps: BTreeSet<_> = m.iter().map(|r| r.composition_id.as_str()).collect();
        assert_eq!(comps.len(), 3);
        validate_manifest(&m).unwrap();
    }

    #[test]
    fn tags_propagate() {
        let mut ann = Annotations::new();
        ann.insert("x".into(), tags(&[Instrument::Drone, Instrument::Keyboard]));
        let files = ["x__0000000.wav", "x__0010000.wav"];
        let m = build_manifest(&files, &ann, "s").unwrap();
        assert!(m.iter().all(|r| r.instrument_tags == tags(&[Instrument::Drone, Instrument::Keyboard])));
        assert_eq!(m[1].offset_s, 10.0);
    }

    #[test]
    fn duplicates_rejected() {
        let mut ann = Annotations::new();
        ann.insert("x".into(), tags(&[Instrument::Drone]));
        let files = ["x__0000000.wav", "x__0000000.wav"];
        assert!(matches!(build_manifest(&files, &ann, "s"), Err(CoreError::DuplicateClip(_))));
        // Same offset spelled differently.
        let files = ["x__0000000.wav", "x__0.wav"];
        assert!(matches!(build_manifest(&files, &ann, "s"), Err(CoreError::DuplicateClip(_))));
    }

    #[test]
    fn missing_annotation_names_composition() {
        let ann = Annotations::new();
        let err = build_manifest(&["lost__0000000.wav"], &ann, "s").unwrap_err();
        assert!(err.to_string().contains("lost"));
    }

    #[test]
    fn clip_id_round_trip() {
        let id = clip_id("rec__with__sep", 12.5);
        assert_eq!(parse_clip_id(&id), Some(("rec__with__sep".into(), 12.5)));
        assert_eq!(parse_clip_id("nosep"), None);
    }

    #[test]
    fn instrument_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Instrument::Percussion).unwrap(), "\"percussion\"");
        assert_eq!("guitar".parse::<Instrument>().unwrap(), Instrument::Guitar);
    }
}
